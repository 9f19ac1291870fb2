//! Scenario files (TOML, `format = 1`): scene objects, calibration
//! constants and operator-facing settings for one scripted task.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bvm::BagModel;
use super::contact::ContactSurface;
use crate::error::FormatError;
use crate::format::parse_versioned;
use crate::side::{PerSide, Side};
use crate::teleop::PedalConfig;

pub const SCENARIO_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Bvm,
    Needle,
    Free,
}

/// How keypoint-derived hand configurations reach the robot hand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandMode {
    /// Nearest grasp template from the active set.
    Snap,
    /// Raw retargeting output.
    Retarget,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmInit {
    /// Initial joint angles; all zeros when empty.
    #[serde(default)]
    pub q0: Vec<f64>,
    /// Initial hand joint angles; all zeros when empty.
    #[serde(default)]
    pub hand_q0: Vec<f64>,
    /// Initially active grasp template (overrides `hand_q0`).
    #[serde(default)]
    pub template: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Per-joint speed limit, rad/s.
    pub joint_speed_limit: f64,
    /// Viscous decay rate of uncommanded joint velocity, 1/s.
    pub joint_damping: f64,
    /// Robot hand joint-space speed (Euclidean norm), rad/s.
    pub hand_speed: f64,
    /// Standard deviation of synthesized joint-torque noise, N·m.
    pub torque_noise_sigma: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            joint_speed_limit: 2.0,
            joint_damping: 5.0,
            hand_speed: 2.5,
            torque_noise_sigma: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagSpec {
    pub rest_volume_ml: f64,
    pub compressible_ml: f64,
    pub leak: f64,
    /// Maximum compression fraction reachable with one hand (fitted).
    pub single_hand_max: f64,
    /// Maximum compression fraction reachable with two hands (fitted).
    pub two_hand_max: f64,
    /// Hands squeezing the bag.
    pub hands: Vec<Side>,
    pub open_template: String,
    pub closed_template: String,
    /// Compression fraction above which a breath is in progress.
    #[serde(default = "default_onset")]
    pub onset: f64,
}

impl BagSpec {
    pub fn model(&self) -> BagModel {
        BagModel {
            rest_volume_ml: self.rest_volume_ml,
            compressible_ml: self.compressible_ml,
            leak: self.leak,
        }
    }
}

fn default_onset() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeedleSpec {
    pub arm: Side,
    /// Name of the surface the needle approaches.
    pub surface: String,
    pub image_normal: [f64; 3],
    /// Approach windows `[start, end]` in seconds.
    pub attempts: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceSpec {
    pub arm: Side,
    /// Force the end effector should exert on the environment, N.
    pub force: [f64; 3],
    /// Target offset velocity per newton of force error, m/(N·s).
    #[serde(default = "default_admittance")]
    pub admittance_gain: f64,
}

fn default_admittance() -> f64 {
    0.002
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub c1_axis: [f64; 3],
    pub c2_axis: [f64; 3],
    /// Per-coordinate keypoint noise, m.
    #[serde(default)]
    pub noise_sigma: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            c1_axis: [0.0, 0.0, -1.0],
            c2_axis: [-1.0, 0.0, 0.0],
            noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: u32,
    pub name: String,
    pub kind: ScenarioKind,
    pub hand_mode: HandMode,
    #[serde(default)]
    pub active_tasks: Vec<String>,
    #[serde(default)]
    pub required_templates: Vec<String>,
    #[serde(default = "default_gain")]
    pub translation_gain: f64,
    #[serde(default)]
    pub pedals: PedalConfig,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub arms: PerSide<ArmInit>,
    #[serde(default)]
    pub cameras: CameraSpec,
    #[serde(default)]
    pub bag: Option<BagSpec>,
    #[serde(default)]
    pub surfaces: Vec<ContactSurface>,
    #[serde(default)]
    pub needle: Option<NeedleSpec>,
    #[serde(default)]
    pub impedance: Vec<ImpedanceSpec>,
}

fn default_gain() -> f64 {
    1.0
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let s: Scenario = parse_versioned(text, SCENARIO_FORMAT)?;
        s.validate().map_err(FormatError::Invalid)?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn surface(&self, name: &str) -> Option<&ContactSurface> {
        self.surfaces.iter().find(|s| s.name == name)
    }

    pub fn impedance_for(&self, side: Side) -> Option<&ImpedanceSpec> {
        self.impedance.iter().find(|i| i.arm == side)
    }

    fn validate(&self) -> Result<(), String> {
        let p = &self.sim;
        for (v, what) in [
            (p.joint_speed_limit, "joint_speed_limit"),
            (p.hand_speed, "hand_speed"),
            (self.translation_gain, "translation_gain"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{what} must be positive"));
            }
        }
        if !(p.joint_damping >= 0.0) || !(p.torque_noise_sigma >= 0.0) {
            return Err("joint_damping and torque_noise_sigma must be non-negative".into());
        }
        for s in &self.surfaces {
            s.validate()?;
        }
        if let Some(b) = &self.bag {
            b.model().validate()?;
            for m in [b.single_hand_max, b.two_hand_max] {
                if !(0.0..=1.0).contains(&m) {
                    return Err("bag hand maxima must lie in [0, 1]".into());
                }
            }
            if b.hands.is_empty() || b.hands.len() > 2 || (b.hands.len() == 2 && b.hands[0] == b.hands[1]) {
                return Err("bag needs one hand or both distinct hands".into());
            }
        }
        if let Some(n) = &self.needle {
            if self.surface(&n.surface).is_none() {
                return Err(format!("needle surface `{}` is not declared", n.surface));
            }
            if n.attempts.iter().any(|w| !(w[1] > w[0])) {
                return Err("needle attempt windows need end > start".into());
            }
        }
        match self.kind {
            ScenarioKind::Bvm if self.bag.is_none() => Err("bvm scenario needs a [bag] section".into()),
            ScenarioKind::Needle if self.needle.is_none() => {
                Err("needle scenario needs a [needle] section".into())
            }
            _ => Ok(()),
        }
    }
}
