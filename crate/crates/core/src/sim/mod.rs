//! Deterministic kinematic simulation of the two arms, their hands and the
//! scenario objects.
//!
//! Arms follow commanded end-effector poses through one damped least-squares
//! step per tick, limited by a per-joint speed. Contact is penalty based.
//! Joint torques are synthesized (gravity plus the wrench the end effector
//! exerts on the environment plus Gaussian noise) for the wrench estimator;
//! they are never integrated.

mod bvm;
mod contact;
mod needle;
mod scenario;

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use bvm::{bvm_metrics, BagModel, Breath, BvmMetrics, TIDAL_RANGE_ML};
pub use contact::{ContactSurface, Shape, MAX_PENETRATION};
pub use needle::{needle_angle_check, needle_axis, NeedleAttempt};
pub(crate) use needle::AttemptAccumulator;
pub use scenario::{
    ArmInit, BagSpec, CameraSpec, HandMode, ImpedanceSpec, NeedleSpec, Scenario, ScenarioKind,
    SimParams, SCENARIO_FORMAT,
};

use crate::compliance::{estimate_ee_wrench, impedance_torque, WrenchEstimate};
use crate::error::KinematicsError;
use crate::geom::{Pose, Vec3};
use crate::kinematics::{JointVector, SerialChain, TrackParams, GRAVITY};
use crate::retarget::HandModel;
use crate::side::{PerSide, Side};

#[derive(Clone, Debug, PartialEq)]
pub struct ArmState {
    pub q: JointVector,
    pub qd: Vec<f64>,
    pub ee: Pose,
    /// Force the surfaces exert on the end effector, N.
    pub contact_force: Vec3,
    /// Capped penetration per surface (for the damping term).
    pub depths: Vec<f64>,
    pub tau_measured: Vec<f64>,
    pub tau_cmd: Vec<f64>,
    /// Estimated wrench the end effector exerts on the environment.
    pub wrench: WrenchEstimate,
}

impl ArmState {
    pub fn in_contact(&self) -> bool {
        self.depths.iter().any(|d| *d > 0.0)
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.qd.iter().map(|v| v * v).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandState {
    pub q: Vec<f64>,
    pub target: Vec<f64>,
    pub template: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub tick: u64,
    pub clock: f64,
    pub arms: PerSide<ArmState>,
    pub hands: PerSide<HandState>,
    /// Bag compression fraction in `[0, 1]` (bag scenarios only).
    pub bag_compression: Option<f64>,
}

impl SimState {
    pub fn kinetic_energy(&self) -> f64 {
        self.arms.left.kinetic_energy() + self.arms.right.kinetic_energy()
    }

    /// One state-log line. Floats use round-trip formatting, so equal lines
    /// mean bit-identical states.
    pub fn log_line(&self) -> String {
        let mut s = format!("{} {}", self.tick, self.clock);
        for side in Side::BOTH {
            let a = &self.arms[side];
            let h = &self.hands[side];
            let _ = write!(s, " {side} q={} qd={}", join(a.q.angles()), join(&a.qd));
            let [w, x, y, z] = a.ee.rotation.wxyz();
            let p = a.ee.position;
            let _ = write!(s, " ee={},{},{},{},{},{},{}", p.x, p.y, p.z, w, x, y, z);
            let _ = write!(s, " fc={},{},{}", a.contact_force.x, a.contact_force.y, a.contact_force.z);
            let _ = write!(s, " tau={} cmd={}", join(&a.tau_measured), join(&a.tau_cmd));
            let _ = write!(s, " w={},{}", join(&a.wrench.force), join(&a.wrench.torque));
            let _ = write!(s, " hand={} tpl={}", join(&h.q), h.template.as_deref().unwrap_or("-"));
        }
        if let Some(c) = self.bag_compression {
            let _ = write!(s, " bag={c}");
        }
        s
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmCommand {
    pub target: Pose,
    /// Force/torque the end effector should exert on the environment.
    pub wrench: WrenchEstimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandCommand {
    pub target: Vec<f64>,
    pub template: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Commands {
    pub arms: PerSide<Option<ArmCommand>>,
    pub hands: PerSide<Option<HandCommand>>,
}

/// Bag squeeze geometry resolved against the template library.
#[derive(Clone, Debug, PartialEq)]
pub struct BagRig {
    pub spec: BagSpec,
    pub open: Vec<f64>,
    pub closed: Vec<f64>,
}

impl BagRig {
    /// Closure of one hand: projection of its joints onto the open→closed
    /// segment, clamped to `[0, 1]`.
    pub fn closure(&self, q: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((a, o), c) in q.iter().zip(&self.open).zip(&self.closed) {
            num += (a - o) * (c - o);
            den += (c - o) * (c - o);
        }
        if den == 0.0 {
            return 0.0;
        }
        (num / den).clamp(0.0, 1.0)
    }

    pub fn compression(&self, hands: &PerSide<HandState>) -> f64 {
        let squeezing = &self.spec.hands;
        let mean = squeezing.iter().map(|s| self.closure(&hands[*s].q)).sum::<f64>() / squeezing.len() as f64;
        let max = if squeezing.len() >= 2 {
            self.spec.two_hand_max
        } else {
            self.spec.single_hand_max
        };
        (max * mean).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub chains: PerSide<SerialChain>,
    pub hand: HandModel,
    pub surfaces: Vec<ContactSurface>,
    pub bag: Option<BagRig>,
    pub params: SimParams,
    pub dt: f64,
    pub seed: u64,
}

/// Owns the scene description and the noise generator; steps states.
#[derive(Clone, Debug)]
pub struct World {
    cfg: WorldConfig,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.params.torque_noise_sigma).expect("validated sigma");
        World { cfg, rng, noise }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn chain(&self, side: Side) -> &SerialChain {
        &self.cfg.chains[side]
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    pub fn initial_state(
        &mut self,
        arm_q: PerSide<Vec<f64>>,
        hand_q: PerSide<(Vec<f64>, Option<String>)>,
    ) -> Result<SimState, KinematicsError> {
        let mut arms = Vec::new();
        for side in Side::BOTH {
            let chain = &self.cfg.chains[side];
            let mut q = chain.joint_vector(arm_q[side].clone())?;
            chain.clamp(&mut q);
            let zero = vec![0.0; chain.dof()];
            arms.push(self.settle_arm(side, q, zero.clone(), None, &zero)?);
        }
        let right = arms.pop().unwrap();
        let left = arms.pop().unwrap();
        let hands = PerSide::from_fn(|side| {
            let (q, template) = &hand_q[side];
            let mut q = q.clone();
            self.cfg.hand.clamp(&mut q);
            HandState {
                target: q.clone(),
                q,
                template: template.clone(),
            }
        });
        let bag_compression = self.cfg.bag.as_ref().map(|b| b.compression(&hands));
        Ok(SimState {
            tick: 0,
            clock: 0.0,
            arms: PerSide::new(left, right),
            hands,
            bag_compression,
        })
    }

    /// Contact, torque synthesis and wrench estimation for an arm at `q`.
    fn settle_arm(
        &mut self,
        side: Side,
        q: JointVector,
        qd: Vec<f64>,
        cmd: Option<&ArmCommand>,
        prev_depths: &[f64],
    ) -> Result<ArmState, KinematicsError> {
        let chain = &self.cfg.chains[side];
        let ee = chain.forward_kinematics(&q)?;
        let mut contact_force = Vec3::zeros();
        let mut depths = Vec::with_capacity(self.cfg.surfaces.len());
        for (i, s) in self.cfg.surfaces.iter().enumerate() {
            let d = s.capped_depth(&ee.position);
            let prev = prev_depths.get(i).copied().unwrap_or(0.0);
            contact_force += s.force(&ee.position, d, (d - prev) / self.cfg.dt);
            depths.push(d);
        }
        let g = Vec3::from(GRAVITY);
        let tau_g = chain.gravity_torques(&q, &g)?;
        let jac = chain.geometric_jacobian(&q)?;
        let applied = DVector::from_vec(vec![-contact_force.x, -contact_force.y, -contact_force.z, 0.0, 0.0, 0.0]);
        let mut tau_measured = &tau_g + jac.transpose() * applied;
        for t in tau_measured.iter_mut() {
            *t += self.noise.sample(&mut self.rng);
        }
        let wrench = estimate_ee_wrench(chain, &q, &tau_measured, &tau_g)?;
        let commanded = cmd.map(|c| c.wrench).unwrap_or_default();
        let tau_cmd = impedance_torque(chain, &q, &commanded, &g)?;
        Ok(ArmState {
            q,
            qd,
            ee,
            contact_force,
            depths,
            tau_measured: tau_measured.as_slice().to_vec(),
            tau_cmd: tau_cmd.as_slice().to_vec(),
            wrench,
        })
    }

    fn step_arm(&mut self, prev: &ArmState, side: Side, cmd: Option<&ArmCommand>) -> Result<ArmState, KinematicsError> {
        let dt = self.cfg.dt;
        let chain = &self.cfg.chains[side];
        let (q, qd) = match cmd {
            Some(c) => {
                let params = TrackParams {
                    step_cap: (self.cfg.params.joint_speed_limit * dt).min(TrackParams::default().step_cap),
                    ..TrackParams::default()
                };
                let q = chain.track_pose(&prev.q, &c.target, &params)?;
                let qd = q.angles().iter().zip(prev.q.angles()).map(|(a, b)| (a - b) / dt).collect();
                (q, qd)
            }
            None => {
                let decay = (1.0 - self.cfg.params.joint_damping * dt).max(0.0);
                let mut q = prev.q.clone();
                let mut qd: Vec<f64> = prev.qd.iter().map(|v| v * decay).collect();
                for ((a, v), j) in q.angles_mut().iter_mut().zip(qd.iter_mut()).zip(chain.joints()) {
                    let next = *a + *v * dt;
                    let clamped = next.clamp(j.lower, j.upper);
                    if clamped != next {
                        *v = 0.0;
                    }
                    *a = clamped;
                }
                (q, qd)
            }
        };
        let depths = prev.depths.clone();
        self.settle_arm(side, q, qd, cmd, &depths)
    }

    fn step_hand(&self, prev: &HandState, cmd: Option<&HandCommand>) -> HandState {
        let mut next = prev.clone();
        if let Some(c) = cmd {
            next.target = c.target.clone();
            self.cfg.hand.clamp(&mut next.target);
            next.template = c.template.clone();
        }
        let dist = next
            .q
            .iter()
            .zip(&next.target)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        let reach = self.cfg.params.hand_speed * self.cfg.dt;
        if dist <= reach {
            next.q = next.target.clone();
        } else {
            let f = reach / dist;
            for (a, b) in next.q.iter_mut().zip(&next.target) {
                *a += (b - *a) * f;
            }
        }
        next
    }

    /// Advances the simulation by one fixed period.
    pub fn step(&mut self, state: &SimState, cmd: &Commands) -> Result<SimState, KinematicsError> {
        let left = self.step_arm(&state.arms.left, Side::Left, cmd.arms.left.as_ref())?;
        let right = self.step_arm(&state.arms.right, Side::Right, cmd.arms.right.as_ref())?;
        let hands = PerSide::new(
            self.step_hand(&state.hands.left, cmd.hands.left.as_ref()),
            self.step_hand(&state.hands.right, cmd.hands.right.as_ref()),
        );
        let bag_compression = self.cfg.bag.as_ref().map(|b| b.compression(&hands));
        let tick = state.tick + 1;
        Ok(SimState {
            tick,
            clock: tick as f64 * self.cfg.dt,
            arms: PerSide::new(left, right),
            hands,
            bag_compression,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::builtin_arms;

    fn world(surfaces: Vec<ContactSurface>, sigma: f64) -> World {
        let arms = builtin_arms();
        World::new(WorldConfig {
            chains: PerSide::new(arms["left_arm"].clone(), arms["right_arm"].clone()),
            hand: HandModel::builtin(),
            surfaces,
            bag: None,
            params: SimParams {
                torque_noise_sigma: sigma,
                ..SimParams::default()
            },
            dt: 0.01,
            seed: 1,
        })
    }

    fn start(w: &mut World) -> SimState {
        let q = vec![0.3, 0.0, 0.0, -1.2, 0.0, 0.4, 0.0];
        w.initial_state(PerSide::new(q.clone(), q), PerSide::new((vec![0.0; 10], None), (vec![0.0; 10], None)))
            .unwrap()
    }

    #[test]
    fn idle_step_only_advances_clock() {
        let mut w = world(vec![], 0.0);
        let s0 = start(&mut w);
        let s1 = w.step(&s0, &Commands::default()).unwrap();
        assert_eq!(s1.clock, 0.01);
        assert_eq!(s1.arms, s0.arms);
        assert_eq!(s1.hands, s0.hands);
    }

    #[test]
    fn hand_moves_at_bounded_speed() {
        let mut w = world(vec![], 0.0);
        let s0 = start(&mut w);
        let mut cmd = Commands::default();
        cmd.hands.right = Some(HandCommand {
            target: vec![1.0; 10],
            template: None,
        });
        let s1 = w.step(&s0, &cmd).unwrap();
        let moved = s1.hands.right.q.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((moved - 2.5 * 0.01).abs() < 1e-12);
    }
}
