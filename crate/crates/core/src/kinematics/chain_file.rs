//! Chain definition files (TOML, `format = 1`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Joint, SerialChain};
use crate::error::FormatError;
use crate::format::parse_versioned;
use crate::geom::{PoseSpec, Vec3};

pub const CHAIN_FORMAT: u32 = 1;

const BUILTIN_ARMS: &str = include_str!("../../data/arms.toml");

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub format: u32,
    #[serde(default)]
    pub chains: Vec<ChainSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub name: String,
    #[serde(default)]
    pub base: PoseSpec,
    #[serde(default)]
    pub tool: PoseSpec,
    pub joints: Vec<JointSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    #[serde(default)]
    pub origin: PoseSpec,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    #[serde(default)]
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
}

impl ChainSpec {
    pub fn build(&self) -> Result<SerialChain, FormatError> {
        let invalid = |e: &dyn std::fmt::Display| FormatError::Invalid(format!("chain `{}`: {e}", self.name));
        let joints = self
            .joints
            .iter()
            .map(|j| {
                Ok(Joint {
                    name: j.name.clone(),
                    origin: j.origin.to_pose().map_err(|e| invalid(&e))?,
                    axis: Vec3::from(j.axis),
                    lower: j.limits[0],
                    upper: j.limits[1],
                    mass: j.mass,
                    com: Vec3::from(j.com),
                })
            })
            .collect::<Result<Vec<_>, FormatError>>()?;
        SerialChain::new(
            &self.name,
            self.base.to_pose().map_err(|e| invalid(&e))?,
            joints,
            self.tool.to_pose().map_err(|e| invalid(&e))?,
        )
        .map_err(|e| invalid(&e))
    }
}

pub fn parse_chains(text: &str) -> Result<BTreeMap<String, SerialChain>, FormatError> {
    let file: ChainFile = parse_versioned(text, CHAIN_FORMAT)?;
    let mut out = BTreeMap::new();
    for spec in &file.chains {
        let chain = spec.build()?;
        if out.insert(spec.name.clone(), chain).is_some() {
            return Err(FormatError::Invalid(format!("duplicate chain `{}`", spec.name)));
        }
    }
    Ok(out)
}

pub fn load_chains(path: &Path) -> Result<BTreeMap<String, SerialChain>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_chains(&text)
}

/// The shipped 7-DOF anthropomorphic arm pair (`left_arm`, `right_arm`).
pub fn builtin_arms() -> BTreeMap<String, SerialChain> {
    parse_chains(BUILTIN_ARMS).expect("shipped arm definition parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_arms_have_seven_joints() {
        let arms = builtin_arms();
        for name in ["left_arm", "right_arm"] {
            let c = &arms[name];
            assert_eq!(c.dof(), 7);
            let reach: f64 = c
                .joints()
                .iter()
                .map(|j| j.origin.position.norm())
                .sum::<f64>()
                + c.tool().position.norm();
            assert!((reach - 0.65).abs() < 1e-9, "{name} reach {reach}");
        }
    }

    #[test]
    fn version_mismatch() {
        let err = parse_chains("format = 2\n").unwrap_err();
        assert!(matches!(err, FormatError::UnsupportedFormat { .. }));
    }

    #[test]
    fn unknown_key_is_parse_error() {
        let text = "format = 1\n[[chains]]\nname = \"x\"\nbogus = 1\njoints = []\n";
        assert!(matches!(parse_chains(text), Err(FormatError::Parse { .. })));
    }

    #[test]
    fn bad_limits_rejected() {
        let text = r#"format = 1
[[chains]]
name = "x"
[[chains.joints]]
name = "j"
axis = [0, 0, 1]
limits = [1.0, -1.0]
"#;
        assert!(matches!(parse_chains(text), Err(FormatError::Invalid(_))));
    }
}
