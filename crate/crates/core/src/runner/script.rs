//! Scripted operator sessions for the shipped scenarios.
//!
//! A script plays a virtual operator: it plans end-effector motions and
//! hand closures, inverts the clutch mapping to find the hand poses that
//! produce them, and renders hand keypoints through the scenario's camera
//! rig. The shipped session files are exactly what these generators emit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::controller::{Controller, Setup};
use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation, Vec3};
use crate::side::{PerSide, Side};
use crate::synthetic::{CameraRig, HumanHand};
use crate::teleop::{write_session, Edge, EventPayload, PedalAction, PedalEdge, PedalId, SessionEvent};

/// Keypoint coordinates are stored at 0.1 mm resolution.
const KEYPOINT_QUANTUM: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Script {
    /// Fifteen breaths, one hand squeezing, 6 s apart.
    BvmSingle,
    /// Fifteen breaths, both hands squeezing.
    BvmTwoHand,
    /// Three in-plane needle approaches at 30° to the skin.
    Needle,
    /// Stethoscope held against the chest under force regulation.
    Auscultation,
}

impl Script {
    pub const ALL: [Script; 4] = [Script::BvmSingle, Script::BvmTwoHand, Script::Needle, Script::Auscultation];

    /// Base name shared by the shipped scenario, session and config files.
    pub fn name(&self) -> &'static str {
        match self {
            Script::BvmSingle => "bvm_paper_matched",
            Script::BvmTwoHand => "bvm_two_hand",
            Script::Needle => "needle_injection",
            Script::Auscultation => "auscultation",
        }
    }

    pub fn from_name(name: &str) -> Option<Script> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Renders the session file for `setup` (which must load this script's
    /// scenario).
    pub fn generate(&self, setup: &Setup) -> Result<String> {
        let events = match self {
            Script::BvmSingle => bvm(setup, &BVM_SINGLE)?,
            Script::BvmTwoHand => bvm(setup, &BVM_TWO_HAND)?,
            Script::Needle => needle(setup)?,
            Script::Auscultation => auscultation(setup)?,
        };
        Ok(write_session(&events))
    }
}

/// Event list with tick-aligned, decimal-clean timestamps.
struct Timeline {
    dt: f64,
    events: Vec<SessionEvent>,
}

impl Timeline {
    fn new(dt: f64) -> Self {
        Timeline { dt, events: Vec::new() }
    }

    fn time(&self, tick: u64) -> f64 {
        (tick as f64 * self.dt * 1e6).round() / 1e6
    }

    fn push(&mut self, tick: u64, payload: EventPayload) {
        let t = self.time(tick);
        self.events.push(SessionEvent::new(t, payload));
    }

    fn ticks(&self, seconds: f64) -> u64 {
        (seconds / self.dt).round() as u64
    }

    fn finish(mut self, end_tick: u64) -> Vec<SessionEvent> {
        self.push(end_tick, EventPayload::End);
        self.events.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.events
    }
}

/// Smooth 0→1 ramp with zero velocity and acceleration at both ends.
fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
    let rel = a.rotation.inverse().compose(&b.rotation).log();
    Pose::new(
        a.rotation.compose(&Rotation::exp(&(rel * s))),
        a.position + (b.position - a.position) * s,
    )
}

/// Gaussian hand tremor: per-sample position (m) and rotation (rad) noise.
struct Tremor {
    rng: ChaCha8Rng,
    position: Normal<f64>,
    rotation: Normal<f64>,
}

impl Tremor {
    fn new(seed: u64, position_sigma: f64, rotation_sigma: f64) -> Self {
        Tremor {
            rng: ChaCha8Rng::seed_from_u64(seed),
            position: Normal::new(0.0, position_sigma).expect("finite sigma"),
            rotation: Normal::new(0.0, rotation_sigma).expect("finite sigma"),
        }
    }

    fn vec(&mut self, d: Normal<f64>) -> Vec3 {
        Vec3::new(d.sample(&mut self.rng), d.sample(&mut self.rng), d.sample(&mut self.rng))
    }

    fn apply(&mut self, pose: &Pose) -> Pose {
        let dp = self.vec(self.position);
        let dr = self.vec(self.rotation);
        Pose::new(Rotation::exp(&dr).compose(&pose.rotation), pose.position + dp)
    }
}

/// Inverse of the clutch mapping for one arm after its first clutch.
struct Operator {
    hand0: Pose,
    ee0: Pose,
    gain: f64,
    tremor: Option<Tremor>,
}

impl Operator {
    fn hand_for(&mut self, ee: &Pose) -> Pose {
        let rotation = self
            .hand0
            .rotation
            .compose(&self.ee0.rotation.inverse())
            .compose(&ee.rotation);
        let position = self.hand0.position + (ee.position - self.ee0.position) / self.gain;
        let hand = Pose::new(rotation, position);
        match &mut self.tremor {
            Some(t) => t.apply(&hand),
            None => hand,
        }
    }
}

fn clutch_pedal(setup: &Setup) -> Result<PedalId> {
    let p = &setup.scenario.pedals;
    [PedalId::Left, PedalId::Right]
        .into_iter()
        .find(|id| p.action(*id) == PedalAction::ClutchBoth)
        .ok_or_else(|| Error::Config("script needs a pedal mapped to clutch-both".into()))
}

/// Sends the operator's resting hand pose and taps the clutch so the arm
/// mapping starts from the current end-effector pose.
fn engage(tl: &mut Timeline, setup: &Setup, side: Side, hand0: Pose, tremor: Option<Tremor>) -> Result<Operator> {
    let ee0 = Controller::new(setup.clone())?.state().arms[side].ee;
    let pedal = clutch_pedal(setup)?;
    tl.push(1, EventPayload::HandPose { arm: side, pose: hand0 });
    tl.push(2, EventPayload::Pedal(PedalEdge { pedal, edge: Edge::Down }));
    tl.push(4, EventPayload::Pedal(PedalEdge { pedal, edge: Edge::Up }));
    Ok(Operator {
        hand0,
        ee0,
        gain: setup.scenario.translation_gain,
        tremor,
    })
}

/// Streams hand poses every `every` ticks while following `path` (a
/// function of seconds since `start_s`) for `duration` seconds.
fn stream_poses(
    tl: &mut Timeline,
    op: &mut Operator,
    side: Side,
    start_s: f64,
    duration: f64,
    every: u64,
    path: impl Fn(f64) -> Pose,
) {
    let start = tl.ticks(start_s);
    let n = tl.ticks(duration);
    let mut k = 0;
    while k <= n {
        let ee = path(k as f64 * tl.dt);
        tl.push(start + k, EventPayload::HandPose { arm: side, pose: op.hand_for(&ee) });
        k += every;
    }
}

struct BvmPlan {
    hands: &'static [Side],
    breaths: usize,
    period_s: f64,
    first_s: f64,
    close_s: f64,
    hold_s: f64,
    /// Breaths (0-based) released early; the hand reverses before the bag
    /// is fully squeezed.
    short: &'static [usize],
    short_hold_s: f64,
    /// Keypoints keep streaming this long after each release.
    settle_s: f64,
    frame_every: u64,
    tail_s: f64,
    seed: u64,
}

const BVM_SINGLE: BvmPlan = BvmPlan {
    hands: &[Side::Right],
    breaths: 15,
    period_s: 6.0,
    first_s: 1.0,
    close_s: 0.3,
    hold_s: 1.7,
    short: &[4, 10],
    short_hold_s: 0.45,
    settle_s: 1.2,
    frame_every: 5,
    tail_s: 5.0,
    seed: 0x5eed_0001,
};

const BVM_TWO_HAND: BvmPlan = BvmPlan {
    hands: &[Side::Left, Side::Right],
    breaths: 15,
    period_s: 6.0,
    first_s: 1.0,
    close_s: 0.3,
    hold_s: 1.7,
    short: &[7],
    short_hold_s: 0.45,
    settle_s: 1.2,
    frame_every: 5,
    tail_s: 5.0,
    seed: 0x5eed_0002,
};

/// Operator hand closure (0 open, 1 closed) at `t` seconds into a breath.
fn squeeze_profile(t: f64, close: f64, hold: f64) -> f64 {
    if t < close {
        min_jerk(t / close)
    } else if t < close + hold {
        1.0
    } else {
        1.0 - min_jerk((t - close - hold) / close)
    }
}

fn wrist_pose(side: Side) -> Pose {
    let y = match side {
        Side::Left => 0.15,
        Side::Right => -0.15,
    };
    // Palm tilted halfway between the two camera axes.
    Pose::new(Rotation::from_axis_angle(&Vec3::y(), std::f64::consts::FRAC_PI_4), Vec3::new(0.45, y, 1.0))
}

fn quantize(v: f64) -> f64 {
    let q = (v / KEYPOINT_QUANTUM).round() * KEYPOINT_QUANTUM;
    // Keeps the text form short ("0.4123" rather than "0.41230000000000006").
    format!("{q:.4}").parse().unwrap()
}

fn bvm(setup: &Setup, plan: &BvmPlan) -> Result<Vec<SessionEvent>> {
    let bag = setup
        .scenario
        .bag
        .as_ref()
        .ok_or_else(|| Error::Config("bvm script needs a bag scenario".into()))?;
    let open = &setup.templates.get(&bag.open_template).unwrap().joints;
    let closed = &setup.templates.get(&bag.closed_template).unwrap().joints;
    let human = HumanHand::from_robot(&setup.hand, setup.retarget.alpha);
    let cams = &setup.scenario.cameras;
    let rig = CameraRig {
        axes: [Vec3::from(cams.c1_axis), Vec3::from(cams.c2_axis)],
        noise_sigma: cams.noise_sigma,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut tl = Timeline::new(setup.dt);
    let wrists = PerSide::from_fn(wrist_pose);

    for b in 0..plan.breaths {
        let hold = if plan.short.contains(&b) { plan.short_hold_s } else { plan.hold_s };
        let start = tl.ticks(plan.first_s + b as f64 * plan.period_s);
        let span = 2.0 * plan.close_s + hold + plan.settle_s;
        let mut k = 0;
        while k <= tl.ticks(span) {
            let c = squeeze_profile(k as f64 * setup.dt, plan.close_s, hold);
            let angles: Vec<f64> = open.iter().zip(closed).map(|(o, x)| o + (x - o) * c).collect();
            for &side in plan.hands {
                let truth = human.keypoints(&angles, &wrists[side]);
                let mut views = rig.observe(&truth, &mut rng)?;
                for v in views.iter_mut() {
                    if let Some(kp) = &v.keypoints {
                        let flat: Vec<f64> = kp.to_flat().into_iter().map(quantize).collect();
                        v.keypoints = Some(crate::fusion::KeypointSet::from_flat(&flat)?);
                    }
                }
                tl.push(start + k, EventPayload::Keypoints { hand: side, views });
            }
            k += plan.frame_every;
        }
    }
    let end = tl.ticks(plan.first_s + (plan.breaths - 1) as f64 * plan.period_s + plan.tail_s);
    Ok(tl.finish(end))
}

/// Approach windows of the needle script, seconds: `[start, end]`.
pub const NEEDLE_WINDOWS: [[f64; 2]; 3] = [[4.5, 8.0], [13.5, 17.0], [22.5, 26.0]];

fn needle(setup: &Setup) -> Result<Vec<SessionEvent>> {
    let spec = setup
        .scenario
        .needle
        .as_ref()
        .ok_or_else(|| Error::Config("needle script needs a needle scenario".into()))?;
    let side = spec.arm;
    let surface = setup.scenario.surface(&spec.surface).expect("validated");
    let normal = surface.normal_at(&Vec3::zeros());
    let mut tl = Timeline::new(setup.dt);
    let tremor = Tremor::new(0x5eed_0003, 0.0005, 0.004);
    let mut op = engage(&mut tl, setup, side, Pose::from_translation(Vec3::new(0.3, -0.25, 1.0)), Some(tremor))?;
    tl.push(5, EventPayload::Template { hand: side, name: "syringe".into() });

    // Needle axis (tool x) tilted 30° below the horizontal toward the skin,
    // staying in the vertical x-z imaging plane.
    let tilt = Rotation::from_axis_angle(&Vec3::y(), std::f64::consts::FRAC_PI_6);
    let axis = tilt.rotate(&Vec3::x());
    let skin_z = match &surface.shape {
        crate::sim::Shape::Plane { point, .. } => point[2],
        crate::sim::Shape::Sphere { center, radius } => center[2] + radius,
    };
    let home = op.ee0;
    let mut t0 = 0.1;
    let mut last = home;
    for (i, w) in NEEDLE_WINDOWS.iter().enumerate() {
        let entry = Vec3::new(0.48 + 0.02 * i as f64, -0.2, skin_z);
        // Start 6 cm back along the needle axis, end 5 mm short of the skin.
        let ready = Pose::new(tilt, entry - axis * (0.06 / axis.dot(&-normal)).min(0.12));
        let near = Pose::new(tilt, entry - axis * (0.005 / axis.dot(&-normal)));
        let from = last;
        let move_s = w[0] - 0.5 - t0;
        stream_poses(&mut tl, &mut op, side, t0, move_s, 2, |t| {
            interpolate(&from, &ready, min_jerk(t / move_s))
        });
        let hold_s = 0.5;
        stream_poses(&mut tl, &mut op, side, w[0] - 0.5, hold_s, 2, |_| ready);
        let approach_s = w[1] - w[0];
        stream_poses(&mut tl, &mut op, side, w[0], approach_s, 2, |t| {
            interpolate(&ready, &near, min_jerk(t / approach_s))
        });
        let back_s = 1.0;
        stream_poses(&mut tl, &mut op, side, w[1], back_s, 2, |t| {
            interpolate(&near, &ready, min_jerk(t / back_s))
        });
        last = ready;
        t0 = w[1] + back_s + 0.02;
    }
    let back_s = 3.0;
    stream_poses(&mut tl, &mut op, side, t0, back_s, 2, |t| interpolate(&last, &home, min_jerk(t / back_s)));
    let end = tl.ticks(t0 + back_s + 1.0);
    Ok(tl.finish(end))
}

fn auscultation(setup: &Setup) -> Result<Vec<SessionEvent>> {
    let imp = setup
        .scenario
        .impedance
        .first()
        .ok_or_else(|| Error::Config("auscultation script needs an impedance arm".into()))?;
    let side = imp.arm;
    let mut tl = Timeline::new(setup.dt);
    let tremor = Tremor::new(0x5eed_0004, 0.0005, 0.004);
    let mut op = engage(&mut tl, setup, side, Pose::from_translation(Vec3::new(0.3, -0.25, 1.0)), Some(tremor))?;
    // Tool axis pitched 1.2 rad down, chest piece hovering 1 cm above the
    // chest; force regulation closes the gap and holds the contact force.
    let down = Rotation::from_axis_angle(&Vec3::y(), 1.2);
    let chest = setup.scenario.surfaces.first().expect("validated");
    let chest_z = match &chest.shape {
        crate::sim::Shape::Plane { point, .. } => point[2],
        crate::sim::Shape::Sphere { center, radius } => center[2] + radius,
    };
    let spots = [Vec3::new(0.45, -0.2, chest_z + 0.01), Vec3::new(0.50, -0.15, chest_z + 0.01)];
    let mut from = op.ee0;
    let mut t0 = 0.1;
    for spot in spots {
        let to = Pose::new(down, spot);
        let move_s = 3.0;
        let a = from;
        stream_poses(&mut tl, &mut op, side, t0, move_s, 2, |t| interpolate(&a, &to, min_jerk(t / move_s)));
        // Listening: the hand stays still for 6 s.
        t0 += move_s + 6.0;
        // Lift before moving to the next spot.
        let lifted = Pose::new(down, spot + Vec3::new(0.0, 0.0, 0.05));
        let lift_s = 1.0;
        stream_poses(&mut tl, &mut op, side, t0, lift_s, 2, |t| interpolate(&to, &lifted, min_jerk(t / lift_s)));
        from = lifted;
        t0 += lift_s + 0.02;
    }
    let end = tl.ticks(t0 + 1.0);
    Ok(tl.finish(end))
}
