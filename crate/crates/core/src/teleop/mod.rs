//! Operator-side clutch state machine and relative end-effector mapping.
//!
//! Pressing a clutch pedal freezes the arm and snapshots the operator hand
//! pose and the end-effector pose. After release, only the hand's motion
//! relative to the snapshot drives the end effector:
//!
//! ```text
//! R_ee(t) = R_ee,saved · (R_h,savedᵀ · R_h(t))
//! p_ee(t) = p_ee,saved + gain · (p_h(t) − p_h,saved)
//! ```

mod session_log;

use serde::{Deserialize, Serialize};

pub use session_log::{
    parse_session, read_session, write_session, EventPayload, SessionEvent, SESSION_FORMAT,
};

use crate::error::TeleopError;
use crate::geom::Pose;
use crate::side::{PerSide, Side};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PedalId {
    Left,
    Right,
}

impl PedalId {
    pub fn as_str(&self) -> &'static str {
        match self {
            PedalId::Left => "left",
            PedalId::Right => "right",
        }
    }

    fn index(&self) -> usize {
        match self {
            PedalId::Left => 0,
            PedalId::Right => 1,
        }
    }
}

impl std::str::FromStr for PedalId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "left" => Ok(PedalId::Left),
            "right" => Ok(PedalId::Right),
            o => Err(format!("unknown pedal `{o}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Down,
    Up,
}

impl Edge {
    pub fn as_str(&self) -> &'static str {
        match self {
            Edge::Down => "down",
            Edge::Up => "up",
        }
    }
}

impl std::str::FromStr for Edge {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "down" => Ok(Edge::Down),
            "up" => Ok(Edge::Up),
            o => Err(format!("unknown pedal edge `{o}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PedalEdge {
    pub pedal: PedalId,
    pub edge: Edge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PedalAction {
    ClutchLeftArm,
    ClutchRightArm,
    ClutchBoth,
    ToggleCoupling,
}

impl PedalAction {
    fn arms(&self) -> &'static [Side] {
        match self {
            PedalAction::ClutchLeftArm => &[Side::Left],
            PedalAction::ClutchRightArm => &[Side::Right],
            PedalAction::ClutchBoth => &[Side::Left, Side::Right],
            PedalAction::ToggleCoupling => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedalConfig {
    pub left: PedalAction,
    pub right: PedalAction,
}

impl Default for PedalConfig {
    fn default() -> Self {
        PedalConfig {
            left: PedalAction::ClutchBoth,
            right: PedalAction::ToggleCoupling,
        }
    }
}

impl PedalConfig {
    pub fn action(&self, pedal: PedalId) -> PedalAction {
        match pedal {
            PedalId::Left => self.left,
            PedalId::Right => self.right,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SavedPoses {
    pub hand: Pose,
    pub ee: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ArmClutch {
    pub engaged: bool,
    pub saved: Option<SavedPoses>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClutchState {
    arms: PerSide<ArmClutch>,
    coupling: bool,
    pedal_down: [bool; 2],
    translation_gain: f64,
}

impl Default for ClutchState {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl ClutchState {
    pub fn new(translation_gain: f64) -> Self {
        ClutchState {
            arms: PerSide::default(),
            coupling: false,
            pedal_down: [false; 2],
            translation_gain,
        }
    }

    pub fn arm(&self, side: Side) -> &ArmClutch {
        &self.arms[side]
    }

    pub fn coupling(&self) -> bool {
        self.coupling
    }

    pub fn is_engaged(&self, side: Side) -> bool {
        self.arms[side].engaged
    }

    pub fn is_initialized(&self, side: Side) -> bool {
        self.arms[side].saved.is_some()
    }

    /// Flips coupling mode outside of the pedal path (explicit toggle event).
    pub fn toggle_coupling(&self) -> ClutchState {
        let mut next = self.clone();
        next.coupling = !next.coupling;
        next
    }

    /// Applies one pedal edge. Repeated downs (or ups) on the same pedal are
    /// ignored. A clutch down engages the mapped arms and snapshots their hand
    /// and end-effector poses; arms without a known hand pose are skipped.
    pub fn on_pedal(
        &self,
        config: &PedalConfig,
        edge: PedalEdge,
        hands: &PerSide<Option<Pose>>,
        ees: &PerSide<Pose>,
    ) -> ClutchState {
        let mut next = self.clone();
        let slot = edge.pedal.index();
        let action = config.action(edge.pedal);
        match edge.edge {
            Edge::Down => {
                if next.pedal_down[slot] {
                    return next;
                }
                next.pedal_down[slot] = true;
                if action == PedalAction::ToggleCoupling {
                    next.coupling = !next.coupling;
                }
                for &side in action.arms() {
                    let arm = &mut next.arms[side];
                    if arm.engaged {
                        continue;
                    }
                    if let Some(hand) = hands[side] {
                        arm.engaged = true;
                        arm.saved = Some(SavedPoses { hand, ee: ees[side] });
                    }
                }
            }
            Edge::Up => {
                if !next.pedal_down[slot] {
                    return next;
                }
                next.pedal_down[slot] = false;
                for &side in action.arms() {
                    next.arms[side].engaged = false;
                }
            }
        }
        next
    }

    /// Replaces the saved poses of a released arm so the mapping continues
    /// from `ee` without a jump (used when an arm leaves coupling mode).
    pub fn rebase(&self, side: Side, hand: Pose, ee: Pose) -> ClutchState {
        let mut next = self.clone();
        next.arms[side].saved = Some(SavedPoses { hand, ee });
        next
    }

    /// Commanded end-effector pose for `side` given the current hand pose.
    pub fn relative_target(&self, side: Side, current_hand: &Pose) -> Result<Pose, TeleopError> {
        let arm = &self.arms[side];
        let saved = arm.saved.ok_or(TeleopError::NotInitialized(side.as_str()))?;
        if arm.engaged {
            return Ok(saved.ee);
        }
        let rel = saved.hand.rotation.inverse().compose(&current_hand.rotation);
        let rotation = saved.ee.rotation.compose(&rel);
        let position =
            saved.ee.position + (current_hand.position - saved.hand.position) * self.translation_gain;
        Ok(Pose::new(rotation, position))
    }
}
