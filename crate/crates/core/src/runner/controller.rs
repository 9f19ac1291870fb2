//! The control pipeline: operator events → clutch mapping / coupling →
//! fusion, retargeting and snapping → admittance force regulation →
//! simulator step, plus metric and hash bookkeeping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::report::{BvmReport, ForceTracking, Report};
use crate::compliance::{CouplingFilter, CouplingLaw, CouplingParams, WrenchEstimate};
use crate::error::{Error, Result, RetargetError};
use crate::fusion::fuse;
use crate::geom::{Pose, Vec3};
use crate::kinematics::{builtin_arms, load_chains, SerialChain};
use crate::retarget::{
    keypoint_vectors, retarget, ActiveSet, GraspTemplateLibrary, HandModel, RetargetParams,
    TemplateSnapper,
};
use crate::side::{PerSide, Side};
use crate::sim::{
    bvm_metrics, needle_angle_check, AttemptAccumulator, BagRig, ArmCommand, Commands,
    HandCommand, HandMode, Scenario, SimState, World, WorldConfig,
};
use crate::teleop::{ClutchState, EventPayload};

/// Admittance offsets never move a target further than this, m.
const MAX_ADMITTANCE_OFFSET: f64 = 0.02;

/// Everything loaded and cross-checked before a run starts.
#[derive(Clone, Debug)]
pub struct Setup {
    pub scenario: Scenario,
    pub chains: PerSide<SerialChain>,
    pub hand: HandModel,
    pub templates: GraspTemplateLibrary,
    pub retarget: RetargetParams,
    pub coupling: CouplingParams,
    pub coupling_law: CouplingLaw,
    pub dt: f64,
    pub seed: u64,
}

fn cfg_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl Setup {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let scenario = Scenario::load(&cfg.scenario).map_err(cfg_err)?;
        let chains = match &cfg.chains {
            Some(p) => load_chains(p).map_err(cfg_err)?,
            None => builtin_arms(),
        };
        let hand = match &cfg.hand_model {
            Some(p) => HandModel::load(p).map_err(cfg_err)?,
            None => HandModel::builtin(),
        };
        let templates = match &cfg.templates {
            Some(p) => GraspTemplateLibrary::load(p).map_err(cfg_err)?,
            None => GraspTemplateLibrary::builtin(),
        };
        Self::new(scenario, chains, hand, templates, cfg)
    }

    pub fn new(
        scenario: Scenario,
        mut chains: BTreeMap<String, SerialChain>,
        hand: HandModel,
        templates: GraspTemplateLibrary,
        cfg: &RunConfig,
    ) -> Result<Self> {
        let mut take = |name: &str| {
            chains
                .remove(name)
                .ok_or_else(|| Error::Config(format!("chain file has no `{name}` chain")))
        };
        let chains = PerSide::new(take("left_arm")?, take("right_arm")?);
        templates.validate_for(&hand).map_err(cfg_err)?;
        for name in &scenario.required_templates {
            if templates.get(name).is_none() {
                return Err(Error::Config(format!(
                    "scenario `{}` requires template `{name}`, which the library lacks",
                    scenario.name
                )));
            }
        }
        if let Some(b) = &scenario.bag {
            for name in [&b.open_template, &b.closed_template] {
                if templates.get(name).is_none() {
                    return Err(Error::Config(format!("bag template `{name}` is not in the library")));
                }
            }
        }
        for side in Side::BOTH {
            let init = &scenario.arms[side];
            if !init.q0.is_empty() && init.q0.len() != chains[side].dof() {
                return Err(Error::Config(format!("{side} arm q0 needs {} angles", chains[side].dof())));
            }
            if !init.hand_q0.is_empty() && init.hand_q0.len() != hand.dof() {
                return Err(Error::Config(format!("{side} hand_q0 needs {} angles", hand.dof())));
            }
            if let Some(t) = &init.template {
                if templates.get(t).is_none() {
                    return Err(Error::Config(format!("{side} initial template `{t}` is not in the library")));
                }
            }
        }
        if scenario.hand_mode == HandMode::Snap {
            for side in Side::BOTH {
                let active = ActiveSet::for_side(side, &scenario.active_tasks);
                if !templates.templates().iter().any(|t| active.admits(t)) {
                    return Err(Error::Config(format!(
                        "snap mode: no template in the active set for the {side} hand"
                    )));
                }
            }
        }
        Ok(Setup {
            scenario,
            chains,
            hand,
            templates,
            retarget: cfg.gains.retarget(),
            coupling: cfg.gains.coupling(),
            coupling_law: cfg.gains.coupling_law,
            dt: cfg.dt(),
            seed: cfg.seed,
        })
    }

    pub fn world_config(&self) -> WorldConfig {
        let bag = self.scenario.bag.as_ref().map(|b| BagRig {
            spec: b.clone(),
            open: self.templates.get(&b.open_template).unwrap().joints.clone(),
            closed: self.templates.get(&b.closed_template).unwrap().joints.clone(),
        });
        WorldConfig {
            chains: self.chains.clone(),
            hand: self.hand.clone(),
            surfaces: self.scenario.surfaces.clone(),
            bag,
            params: self.scenario.sim,
            dt: self.dt,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug)]
struct Coupling {
    filter: CouplingFilter,
    /// Follower pose in the leading arm's end-effector frame at toggle time.
    offset: Pose,
}

#[derive(Clone, Debug, Default)]
struct ForceAcc {
    samples: usize,
    sum_abs: f64,
    sum_sq: f64,
}

/// Stateful per-tick pipeline. Events are applied between ticks; `step`
/// advances one control period.
pub struct Controller {
    setup: Setup,
    world: World,
    state: SimState,
    clutch: ClutchState,
    hand_poses: PerSide<Option<Pose>>,
    commanded: PerSide<Option<Pose>>,
    q_user: PerSide<Vec<f64>>,
    snappers: PerSide<TemplateSnapper>,
    pending_hand: PerSide<Option<HandCommand>>,
    coupling: Option<Coupling>,
    admittance: PerSide<Vec3>,
    compression_log: Vec<(f64, f64)>,
    needle: Vec<AttemptAccumulator>,
    force: PerSide<ForceAcc>,
    state_hash: Sha256,
    command_hash: Sha256,
    state_log: Option<Box<dyn Write + Send>>,
    events: usize,
    dropped_frames: usize,
}

impl Controller {
    pub fn new(setup: Setup) -> Result<Self> {
        let mut world = World::new(setup.world_config());
        let arm_q = PerSide::from_fn(|s| {
            let q0 = &setup.scenario.arms[s].q0;
            if q0.is_empty() {
                vec![0.0; setup.chains[s].dof()]
            } else {
                q0.clone()
            }
        });
        let hand_q = PerSide::from_fn(|s| {
            let init = &setup.scenario.arms[s];
            match &init.template {
                Some(t) => (setup.templates.get(t).unwrap().joints.clone(), Some(t.clone())),
                None if init.hand_q0.is_empty() => (vec![0.0; setup.hand.dof()], None),
                None => (init.hand_q0.clone(), None),
            }
        });
        let state = world.initial_state(arm_q, hand_q)?;
        let mut snappers = PerSide::new(TemplateSnapper::new(), TemplateSnapper::new());
        for side in Side::BOTH {
            if let Some(t) = &state.hands[side].template {
                snappers[side].set(setup.templates.index_of(t));
            }
        }
        let q_user = PerSide::from_fn(|s| state.hands[s].q.clone());
        let needle = setup
            .scenario
            .needle
            .as_ref()
            .map_or(0, |n| n.attempts.len());
        let mut state_hash = Sha256::new();
        state_hash.update(state.log_line().as_bytes());
        state_hash.update(b"\n");
        Ok(Controller {
            clutch: ClutchState::new(setup.scenario.translation_gain),
            world,
            state,
            hand_poses: PerSide::default(),
            commanded: PerSide::default(),
            q_user,
            snappers,
            pending_hand: PerSide::default(),
            coupling: None,
            admittance: PerSide::default(),
            compression_log: Vec::new(),
            needle: vec![AttemptAccumulator::default(); needle],
            force: PerSide::default(),
            state_hash,
            command_hash: Sha256::new(),
            state_log: None,
            events: 0,
            dropped_frames: 0,
            setup,
        })
    }

    /// Streams every state-log line (including the initial state) to `w`.
    pub fn set_state_log(&mut self, mut w: Box<dyn Write + Send>) -> Result<()> {
        writeln!(w, "{}", self.state.log_line()).map_err(runtime)?;
        self.state_log = Some(w);
        Ok(())
    }

    pub fn setup(&self) -> &Setup {
        &self.setup
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn clutch(&self) -> &ClutchState {
        &self.clutch
    }

    pub fn commanded(&self) -> &PerSide<Option<Pose>> {
        &self.commanded
    }

    /// Index of the next tick to run.
    pub fn tick(&self) -> u64 {
        self.state.tick
    }

    pub fn compression_log(&self) -> &[(f64, f64)] {
        &self.compression_log
    }

    fn current_ee(&self, side: Side) -> Pose {
        self.commanded[side].unwrap_or(self.state.arms[side].ee)
    }

    pub fn apply(&mut self, ev: &EventPayload) -> Result<()> {
        self.events += 1;
        match ev {
            EventPayload::HandPose { arm, pose } => self.hand_poses[*arm] = Some(*pose),
            EventPayload::Pedal(edge) => {
                let ees = PerSide::from_fn(|s| self.current_ee(s));
                self.clutch = self
                    .clutch
                    .on_pedal(&self.setup.scenario.pedals, *edge, &self.hand_poses, &ees);
            }
            EventPayload::CouplingToggle => self.clutch = self.clutch.toggle_coupling(),
            EventPayload::Keypoints { hand, views } => self.apply_keypoints(*hand, views),
            EventPayload::Template { hand, name } => {
                let idx = self
                    .setup
                    .templates
                    .index_of(name)
                    .ok_or_else(|| RetargetError::UnknownTemplate(name.clone()))?;
                self.snappers[*hand].set(Some(idx));
                self.pending_hand[*hand] = Some(HandCommand {
                    target: self.setup.templates.templates()[idx].joints.clone(),
                    template: Some(name.clone()),
                });
            }
            EventPayload::End => {}
        }
        self.sync_coupling();
        Ok(())
    }

    fn apply_keypoints(&mut self, side: Side, views: &[crate::fusion::CameraView; 2]) {
        let fused = fuse(&views[0], &views[1]);
        let vectors = fused.and_then(|k| keypoint_vectors(&k));
        let Ok(v) = vectors else {
            self.dropped_frames += 1;
            return;
        };
        let model = &self.setup.hand;
        let prev = model
            .joint_vector(self.q_user[side].clone())
            .expect("hand vector length is fixed");
        let q = match retarget(&v, &prev, model, &self.setup.retarget) {
            Ok(q) => q,
            Err(_) => {
                self.dropped_frames += 1;
                return;
            }
        };
        self.q_user[side] = q.angles().to_vec();
        let cmd = match self.setup.scenario.hand_mode {
            HandMode::Retarget => HandCommand {
                target: q.angles().to_vec(),
                template: None,
            },
            HandMode::Snap => {
                let active = ActiveSet::for_side(side, &self.setup.scenario.active_tasks);
                let lib = &self.setup.templates;
                let idx = self.snappers[side]
                    .update(q.angles(), lib, &active)
                    .expect("active set checked at setup");
                let t = &lib.templates()[idx];
                HandCommand {
                    target: t.joints.clone(),
                    template: Some(t.name.clone()),
                }
            }
        };
        self.pending_hand[side] = Some(cmd);
    }

    fn sync_coupling(&mut self) {
        match (self.clutch.coupling(), self.coupling.is_some()) {
            (true, false) => {
                let lead = self.current_ee(Side::Right);
                let follower = self.current_ee(Side::Left);
                let offset = lead.inverse().compose(&follower);
                self.coupling = Some(Coupling {
                    filter: CouplingFilter::new(&follower, &lead.compose(&offset), self.setup.coupling_law),
                    offset,
                });
            }
            (false, true) => {
                self.coupling = None;
                if let (Some(hand), Some(ee)) = (self.hand_poses.left, self.commanded.left) {
                    if self.clutch.is_initialized(Side::Left) {
                        self.clutch = self.clutch.rebase(Side::Left, hand, ee);
                    }
                }
            }
            _ => {}
        }
    }

    fn operator_target(&self, side: Side) -> Option<Pose> {
        let hand = self.hand_poses[side]?;
        self.clutch.relative_target(side, &hand).ok()
    }

    /// Runs one control period.
    pub fn step(&mut self) -> Result<()> {
        let tick = self.state.tick;
        let mut targets = PerSide::from_fn(|s| self.operator_target(s));
        if let Some(c) = &mut self.coupling {
            let lead = targets.right.unwrap_or_else(|| {
                self.commanded.right.unwrap_or(self.state.arms.right.ee)
            });
            targets.left = Some(c.filter.step(&lead.compose(&c.offset), &self.setup.coupling));
        }
        let mut cmd = Commands::default();
        let mut line = format!("{tick}");
        for side in Side::BOTH {
            self.commanded[side] = targets[side].or(self.commanded[side]);
            let Some(mut target) = targets[side] else {
                line.push_str(" -");
                continue;
            };
            let p = target.position;
            let [w, x, y, z] = target.rotation.wxyz();
            let _ = write!(line, " {},{},{},{},{},{},{}", p.x, p.y, p.z, w, x, y, z);
            let mut wrench = WrenchEstimate::zero();
            if let Some(imp) = self.setup.scenario.impedance_for(side) {
                if !self.clutch.is_engaged(side) {
                    let desired = Vec3::from(imp.force);
                    let err = desired - self.state.arms[side].wrench.force();
                    let off = self.admittance[side] + err * (imp.admittance_gain * self.setup.dt);
                    let n = off.norm();
                    self.admittance[side] = if n > MAX_ADMITTANCE_OFFSET {
                        off * (MAX_ADMITTANCE_OFFSET / n)
                    } else {
                        off
                    };
                    wrench = WrenchEstimate::from_force(desired);
                }
                target.position += self.admittance[side];
            }
            cmd.arms[side] = Some(ArmCommand { target, wrench });
        }
        self.command_hash.update(line.as_bytes());
        self.command_hash.update(b"\n");
        cmd.hands = PerSide::new(self.pending_hand.left.take(), self.pending_hand.right.take());

        self.state = self.world.step(&self.state, &cmd)?;
        self.record()
    }

    fn record(&mut self) -> Result<()> {
        let s = &self.state;
        if let Some(c) = s.bag_compression {
            self.compression_log.push((s.clock, c));
        }
        if let Some(n) = &self.setup.scenario.needle {
            let surface = self.setup.scenario.surface(&n.surface).expect("validated");
            let normal = Vec3::from(n.image_normal);
            for (acc, w) in self.needle.iter_mut().zip(&n.attempts) {
                if s.clock >= w[0] && s.clock <= w[1] {
                    let (dev, inc) = needle_angle_check(&s.arms[n.arm].ee, surface, &normal);
                    acc.push(dev, inc);
                }
            }
        }
        for imp in &self.setup.scenario.impedance {
            let arm = &s.arms[imp.arm];
            if arm.in_contact() {
                let e = (Vec3::from(imp.force) - arm.wrench.force()).norm();
                let acc = &mut self.force[imp.arm];
                acc.samples += 1;
                acc.sum_abs += e;
                acc.sum_sq += e * e;
            }
        }
        let line = s.log_line();
        self.state_hash.update(line.as_bytes());
        self.state_hash.update(b"\n");
        if let Some(w) = &mut self.state_log {
            writeln!(w, "{line}").map_err(runtime)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<Report> {
        if let Some(w) = &mut self.state_log {
            w.flush().map_err(runtime)?;
        }
        let sc = &self.setup.scenario;
        let mut notes = Vec::new();
        let ticks = self.state.tick;
        let bvm = match &sc.bag {
            Some(b) if ticks > 0 => match bvm_metrics(&self.compression_log, &b.model(), b.onset) {
                Ok(m) => Some(BvmReport {
                    calibrated: true,
                    hands: b.hands.len(),
                    metrics: m,
                }),
                Err(e) => {
                    notes.push(format!("bvm: {e}"));
                    None
                }
            },
            _ => None,
        };
        let needle = match &sc.needle {
            Some(n) if ticks > 0 => Some(
                self.needle
                    .iter()
                    .zip(&n.attempts)
                    .enumerate()
                    .map(|(i, (acc, w))| acc.finish(i + 1, *w))
                    .collect(),
            ),
            _ => None,
        };
        let force_tracking = if ticks > 0 {
            sc.impedance
                .iter()
                .map(|imp| {
                    let acc = &self.force[imp.arm];
                    let n = acc.samples.max(1) as f64;
                    ForceTracking {
                        arm: imp.arm,
                        desired_force_n: imp.force,
                        contact_samples: acc.samples,
                        mean_abs_error_n: acc.sum_abs / n,
                        rms_error_n: (acc.sum_sq / n).sqrt(),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Report {
            scenario: sc.name.clone(),
            kind: sc.kind,
            seed: self.setup.seed,
            ticks,
            duration_s: self.state.clock,
            events: self.events,
            dropped_keypoint_frames: self.dropped_frames,
            state_hash: hex::encode(self.state_hash.finalize()),
            command_hash: hex::encode(self.command_hash.finalize()),
            bvm,
            needle,
            force_tracking,
            notes,
        })
    }
}

fn runtime(e: std::io::Error) -> Error {
    Error::Runtime(e.to_string())
}

/// Tick at which an event stamped `t` is applied.
pub fn event_tick(t: f64, dt: f64) -> u64 {
    (t / dt - 1e-6).ceil().max(0.0) as u64
}
