use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, FusionError, KinematicsError};
use crate::format::parse_versioned;
use crate::fusion::{kp, palm_normal, KeypointSet};
use crate::geom::{Pose, Vec3};
use crate::kinematics::{ChainSpec, JointVector, SerialChain};

pub const HAND_FORMAT: u32 = 1;

const BUILTIN_HAND: &str = include_str!("../../data/hand.toml");

/// Robot hand as one serial chain per finger, all rooted at the palm frame.
/// `f_i(q)` is the fingertip position of finger `i` in the palm frame.
#[derive(Clone, Debug, PartialEq)]
pub struct HandModel {
    name: String,
    fingers: Vec<SerialChain>,
    offsets: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandFile {
    format: u32,
    name: String,
    fingers: Vec<ChainSpec>,
}

impl HandModel {
    pub fn new(name: &str, fingers: Vec<SerialChain>) -> Result<Self, KinematicsError> {
        if fingers.is_empty() {
            return Err(KinematicsError::InvalidChain {
                chain: name.into(),
                reason: "hand model needs at least one finger".into(),
            });
        }
        let mut offsets = Vec::with_capacity(fingers.len() + 1);
        let mut acc = 0;
        for f in &fingers {
            offsets.push(acc);
            acc += f.dof();
        }
        offsets.push(acc);
        Ok(HandModel {
            name: name.into(),
            fingers,
            offsets,
        })
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let file: HandFile = parse_versioned(text, HAND_FORMAT)?;
        let fingers = file
            .fingers
            .iter()
            .map(|f| f.build())
            .collect::<Result<Vec<_>, _>>()?;
        HandModel::new(&file.name, fingers).map_err(|e| FormatError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::parse(&text)
    }

    /// Shipped 10-DOF surrogate hand (thumb plus four fingers, two joints each).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_HAND).expect("shipped hand model parses")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fingers(&self) -> &[SerialChain] {
        &self.fingers
    }

    pub fn finger_count(&self) -> usize {
        self.fingers.len()
    }

    pub fn dof(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Joint index range of finger `i` within the hand joint vector.
    pub fn finger_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn joint_vector(&self, angles: Vec<f64>) -> Result<JointVector, KinematicsError> {
        if angles.len() != self.dof() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.dof(),
                got: angles.len(),
            });
        }
        Ok(JointVector::tagged(&self.name, angles))
    }

    pub fn zeros(&self) -> JointVector {
        JointVector::tagged(&self.name, vec![0.0; self.dof()])
    }

    pub fn check(&self, q: &JointVector) -> Result<(), KinematicsError> {
        if q.chain_name() != self.name {
            return Err(KinematicsError::ChainMismatch {
                expected: self.name.clone(),
                got: q.chain_name().into(),
            });
        }
        if q.len() != self.dof() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        if q.angles().iter().any(|a| !a.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        Ok(())
    }

    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.fingers
            .iter()
            .flat_map(|f| f.joints().iter().map(|j| (j.lower, j.upper)))
            .collect()
    }

    pub fn clamp(&self, angles: &mut [f64]) {
        for (a, (lo, hi)) in angles.iter_mut().zip(self.limits()) {
            *a = a.clamp(lo, hi);
        }
    }

    pub fn within_limits(&self, angles: &[f64]) -> bool {
        angles.len() == self.dof()
            && angles
                .iter()
                .zip(self.limits())
                .all(|(a, (lo, hi))| *a >= lo && *a <= hi)
    }

    fn finger_q(&self, i: usize, angles: &[f64]) -> JointVector {
        JointVector::new(&self.fingers[i], angles[self.finger_range(i)].to_vec())
            .expect("finger slice matches finger dof")
    }

    /// Fingertip vector `f_i(q)` in the palm frame.
    pub fn fingertip(&self, i: usize, angles: &[f64]) -> Vec3 {
        self.fingers[i]
            .forward_kinematics(&self.finger_q(i, angles))
            .expect("finger joint vector is well formed")
            .position
    }

    /// 3×k linear Jacobian of `f_i` with respect to finger `i`'s joints.
    pub(crate) fn fingertip_jacobian(&self, i: usize, angles: &[f64]) -> nalgebra::DMatrix<f64> {
        let j = self.fingers[i]
            .geometric_jacobian(&self.finger_q(i, angles))
            .expect("finger joint vector is well formed");
        j.rows(0, 3).into_owned()
    }

    /// Same kinematic structure with every length multiplied by `factor`.
    pub fn scaled(&self, name: &str, factor: f64) -> HandModel {
        let fingers = self
            .fingers
            .iter()
            .map(|f| {
                let scale = |p: &Pose| Pose::new(p.rotation, p.position * factor);
                let joints = f
                    .joints()
                    .iter()
                    .map(|j| {
                        let mut j = j.clone();
                        j.origin = scale(&j.origin);
                        j.com *= factor;
                        j
                    })
                    .collect();
                SerialChain::new(f.name(), scale(f.base()), joints, scale(f.tool()))
                    .expect("scaling preserves validity")
            })
            .collect();
        HandModel::new(name, fingers).expect("non-empty")
    }
}

/// Palm frame of a keypoint set: z along the palm normal, x along the
/// wrist→middle-base direction made orthogonal to z. Columns are the axes.
pub fn palm_frame(k: &KeypointSet) -> Result<Matrix3<f64>, FusionError> {
    let z = palm_normal(k)?;
    let d = k.point(kp::MIDDLE_BASE) - k.point(kp::WRIST);
    let x = d - z * z.dot(&d);
    let n = x.norm();
    if !(n > 1e-12 * d.norm()) || n == 0.0 {
        return Err(FusionError::Degenerate("middle-finger base lies along the palm normal"));
    }
    let x = x / n;
    let y = z.cross(&x);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Fingertip-minus-wrist vectors in the palm frame, thumb first.
pub fn keypoint_vectors(k: &KeypointSet) -> Result<[Vec3; 5], FusionError> {
    let frame = palm_frame(k)?;
    let w = k.point(kp::WRIST);
    Ok(kp::TIPS.map(|i| frame.transpose() * (k.point(i) - w)))
}
