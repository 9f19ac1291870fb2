//! Serial-chain kinematics: forward kinematics, geometric Jacobian, damped
//! least-squares pose tracking and gravity compensation torques.
//!
//! Every joint is revolute. A joint's `origin` is the fixed transform from the
//! previous link frame to the joint frame at zero angle; the joint then rotates
//! about `axis` (expressed in the joint frame). Link mass properties are
//! attached to the frame after the joint rotation.

mod chain_file;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

pub use chain_file::{builtin_arms, load_chains, parse_chains, ChainFile, ChainSpec, JointSpec};

use crate::error::KinematicsError;
use crate::geom::{Pose, Rotation, Vec3};

/// Standard gravity, pointing down the world z axis.
pub const GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub origin: Pose,
    pub axis: Vec3,
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
    pub com: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SerialChain {
    name: Arc<str>,
    base: Pose,
    joints: Vec<Joint>,
    tool: Pose,
}

/// Joint angles tagged with the name of the chain they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct JointVector {
    chain: Arc<str>,
    angles: Vec<f64>,
}

impl JointVector {
    pub fn new(chain: &SerialChain, angles: Vec<f64>) -> Result<Self, KinematicsError> {
        if angles.len() != chain.dof() {
            return Err(KinematicsError::LengthMismatch {
                expected: chain.dof(),
                got: angles.len(),
            });
        }
        Ok(JointVector {
            chain: chain.name.clone(),
            angles,
        })
    }

    /// Builds a vector tagged with an arbitrary name (used for hand models,
    /// whose joint vectors span several finger chains).
    pub fn tagged(tag: &str, angles: Vec<f64>) -> Self {
        JointVector {
            chain: Arc::from(tag),
            angles,
        }
    }

    pub fn chain_name(&self) -> &str {
        &self.chain
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angles_mut(&mut self) -> &mut [f64] {
        &mut self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.angles)
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        self.angles
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// World-frame data for one joint at a given configuration.
#[derive(Clone, Copy, Debug)]
struct JointFrame {
    position: Vec3,
    axis: Vec3,
    /// Link frame after applying the joint rotation.
    link: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackParams {
    pub damping: f64,
    pub step_cap: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            damping: 0.05,
            step_cap: 0.1,
        }
    }
}

impl SerialChain {
    pub fn new(
        name: &str,
        base: Pose,
        joints: Vec<Joint>,
        tool: Pose,
    ) -> Result<Self, KinematicsError> {
        let invalid = |reason: String| KinematicsError::InvalidChain {
            chain: name.to_string(),
            reason,
        };
        if joints.is_empty() {
            return Err(invalid("at least one joint is required".into()));
        }
        let mut joints = joints;
        for j in &mut joints {
            if !(j.lower < j.upper) {
                return Err(invalid(format!("joint `{}`: lower limit must be below upper", j.name)));
            }
            let n = j.axis.norm();
            if !n.is_finite() || n < 1e-12 {
                return Err(invalid(format!("joint `{}`: zero axis", j.name)));
            }
            j.axis /= n;
            if j.mass < 0.0 || !j.mass.is_finite() {
                return Err(invalid(format!("joint `{}`: negative mass", j.name)));
            }
        }
        Ok(SerialChain {
            name: Arc::from(name),
            base,
            joints,
            tool,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    pub fn tool(&self) -> &Pose {
        &self.tool
    }

    pub fn zeros(&self) -> JointVector {
        JointVector {
            chain: self.name.clone(),
            angles: vec![0.0; self.dof()],
        }
    }

    pub fn joint_vector(&self, angles: Vec<f64>) -> Result<JointVector, KinematicsError> {
        JointVector::new(self, angles)
    }

    /// End-effector pose at all-zero joint angles.
    pub fn home_pose(&self) -> Pose {
        self.joints
            .iter()
            .fold(self.base, |t, j| t.compose(&j.origin))
            .compose(&self.tool)
    }

    pub fn check(&self, q: &JointVector) -> Result<(), KinematicsError> {
        if q.chain != self.name {
            return Err(KinematicsError::ChainMismatch {
                expected: self.name.to_string(),
                got: q.chain.to_string(),
            });
        }
        if q.angles.len() != self.dof() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.dof(),
                got: q.angles.len(),
            });
        }
        if q.angles.iter().any(|a| !a.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut JointVector) {
        for (a, j) in q.angles.iter_mut().zip(&self.joints) {
            *a = a.clamp(j.lower, j.upper);
        }
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.angles
            .iter()
            .zip(&self.joints)
            .all(|(a, j)| *a >= j.lower && *a <= j.upper)
    }

    fn frames(&self, angles: &[f64]) -> (Vec<JointFrame>, Pose) {
        let mut t = self.base;
        let mut frames = Vec::with_capacity(self.joints.len());
        for (j, &a) in self.joints.iter().zip(angles) {
            t = t.compose(&j.origin);
            let axis = t.transform_vector(&j.axis);
            let position = t.position;
            if a != 0.0 {
                t = t.compose(&Pose::from_rotation(Rotation::from_axis_angle(&j.axis, a)));
            }
            frames.push(JointFrame {
                position,
                axis,
                link: t,
            });
        }
        let ee = t.compose(&self.tool);
        (frames, ee)
    }

    pub fn forward_kinematics(&self, q: &JointVector) -> Result<Pose, KinematicsError> {
        self.check(q)?;
        Ok(self.frames(&q.angles).1)
    }

    /// 6×N geometric Jacobian; rows 0..3 linear, rows 3..6 angular.
    pub fn geometric_jacobian(&self, q: &JointVector) -> Result<DMatrix<f64>, KinematicsError> {
        self.check(q)?;
        let (frames, ee) = self.frames(&q.angles);
        Ok(jacobian_from_frames(&frames, &ee.position))
    }

    /// One damped least-squares step toward `target`, clamped to joint limits
    /// and to `‖Δq‖ ≤ step_cap`. The step is halved until the task-space error
    /// does not increase; if no halving helps, `q` is returned unchanged.
    pub fn track_pose(
        &self,
        q: &JointVector,
        target: &Pose,
        params: &TrackParams,
    ) -> Result<JointVector, KinematicsError> {
        self.check(q)?;
        if !target.is_finite() {
            return Err(KinematicsError::NonFinite);
        }
        let (frames, ee) = self.frames(&q.angles);
        let err = ee.error_to(target);
        let err_norm = err.norm();
        if err_norm == 0.0 {
            return Ok(q.clone());
        }
        let jac = jacobian_from_frames(&frames, &ee.position);
        let jjt: Matrix6<f64> = (&jac * jac.transpose()).fixed_view::<6, 6>(0, 0).into_owned();
        let damped = jjt + Matrix6::identity() * (params.damping * params.damping);
        let Some(chol) = damped.cholesky() else {
            return Ok(q.clone());
        };
        let y: Vector6<f64> = chol.solve(&err);
        let mut dq: DVector<f64> = jac.transpose() * DVector::from_column_slice(y.as_slice());
        let n = dq.norm();
        if n > params.step_cap {
            dq *= params.step_cap / n;
        }
        for _ in 0..12 {
            let mut cand = q.clone();
            for (a, d) in cand.angles.iter_mut().zip(dq.iter()) {
                *a += d;
            }
            self.clamp(&mut cand);
            let cand_err = self.frames(&cand.angles).1.error_to(target).norm();
            if cand_err <= err_norm {
                return Ok(cand);
            }
            dq *= 0.5;
        }
        Ok(q.clone())
    }

    /// Joint torques that statically balance the link weights under
    /// `gravity` (the gradient of potential energy with respect to `q`).
    pub fn gravity_torques(
        &self,
        q: &JointVector,
        gravity: &Vec3,
    ) -> Result<DVector<f64>, KinematicsError> {
        self.check(q)?;
        let (frames, _) = self.frames(&q.angles);
        let coms: Vec<(f64, Vec3)> = frames
            .iter()
            .zip(&self.joints)
            .map(|(f, j)| (j.mass, f.link.transform_point(&j.com)))
            .collect();
        let mut tau = DVector::zeros(self.dof());
        for (i, f) in frames.iter().enumerate() {
            let mut t = 0.0;
            for (m, c) in &coms[i..] {
                if *m == 0.0 {
                    continue;
                }
                let lever = f.axis.cross(&(c - f.position));
                t -= m * gravity.dot(&lever);
            }
            tau[i] = t;
        }
        Ok(tau)
    }

    /// World positions of each joint origin.
    pub fn joint_positions(&self, q: &JointVector) -> Result<Vec<Vec3>, KinematicsError> {
        self.check(q)?;
        Ok(self.frames(&q.angles).0.iter().map(|f| f.position).collect())
    }

    /// World positions of each link's center of mass.
    pub fn link_com_positions(&self, q: &JointVector) -> Result<Vec<Vec3>, KinematicsError> {
        self.check(q)?;
        let (frames, _) = self.frames(&q.angles);
        Ok(frames
            .iter()
            .zip(&self.joints)
            .map(|(f, j)| f.link.transform_point(&j.com))
            .collect())
    }
}

fn jacobian_from_frames(frames: &[JointFrame], ee: &Vec3) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(6, frames.len());
    for (i, f) in frames.iter().enumerate() {
        let lin = f.axis.cross(&(ee - f.position));
        for r in 0..3 {
            jac[(r, i)] = lin[r];
            jac[(r + 3, i)] = f.axis[r];
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn one_link(mass: f64) -> SerialChain {
        SerialChain::new(
            "one",
            Pose::identity(),
            vec![Joint {
                name: "j0".into(),
                origin: Pose::identity(),
                axis: Vec3::z(),
                lower: -3.0,
                upper: 3.0,
                mass,
                com: Vec3::new(0.5, 0.0, 0.0),
            }],
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
        )
        .unwrap()
    }

    #[test]
    fn home_pose_of_one_link() {
        let c = one_link(1.0);
        let p = c.forward_kinematics(&c.zeros()).unwrap();
        assert_eq!(p.position, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(p.rotation, Rotation::identity());
        assert_eq!(p, c.home_pose());
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = one_link(1.0);
        let q = c.joint_vector(vec![FRAC_PI_2]).unwrap();
        let p = c.forward_kinematics(&q).unwrap();
        assert_relative_eq!(p.position, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch_is_structural() {
        let c = one_link(1.0);
        let q = JointVector::tagged("one", vec![0.0, 1.0]);
        assert!(matches!(
            c.forward_kinematics(&q),
            Err(KinematicsError::LengthMismatch { expected: 1, got: 2 })
        ));
        let wrong = JointVector::tagged("other", vec![0.0]);
        assert!(matches!(
            c.geometric_jacobian(&wrong),
            Err(KinematicsError::ChainMismatch { .. })
        ));
    }

    #[test]
    fn planar_jacobian_column() {
        let c = one_link(1.0);
        let j = c.geometric_jacobian(&c.zeros()).unwrap();
        let col: Vec<f64> = j.column(0).iter().copied().collect();
        assert_eq!(col, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn invalid_chains_rejected() {
        assert!(SerialChain::new("e", Pose::identity(), vec![], Pose::identity()).is_err());
        let mut j = one_link(1.0).joints()[0].clone();
        j.lower = 1.0;
        j.upper = 1.0;
        assert!(SerialChain::new("bad", Pose::identity(), vec![j], Pose::identity()).is_err());
    }

    #[test]
    fn gravity_zero_and_lever() {
        let c = SerialChain::new(
            "pitch",
            Pose::identity(),
            vec![Joint {
                name: "shoulder".into(),
                origin: Pose::identity(),
                axis: Vec3::y(),
                lower: -3.0,
                upper: 3.0,
                mass: 1.0,
                com: Vec3::new(0.5, 0.0, 0.0),
            }],
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
        )
        .unwrap();
        let q = c.zeros();
        let zero = c.gravity_torques(&q, &Vec3::zeros()).unwrap();
        assert_eq!(zero[0], 0.0);
        let tau = c.gravity_torques(&q, &Vec3::from(GRAVITY)).unwrap();
        assert_relative_eq!(tau[0].abs(), 4.905, epsilon = 1e-12);
    }

    #[test]
    fn track_pose_at_target_is_fixed_point() {
        let c = one_link(0.0);
        let q = c.joint_vector(vec![0.4]).unwrap();
        let target = c.forward_kinematics(&q).unwrap();
        let out = c.track_pose(&q, &target, &TrackParams::default()).unwrap();
        assert!((out.angles()[0] - 0.4).abs() < 1e-9);
    }

    #[test]
    fn track_pose_unreachable_stays_in_limits() {
        let c = one_link(0.0);
        let mut q = c.zeros();
        let target = Pose::from_translation(Vec3::new(-3.0, 0.1, 0.0));
        for _ in 0..200 {
            q = c.track_pose(&q, &target, &TrackParams::default()).unwrap();
            assert!(c.within_limits(&q));
            assert!(q.angles()[0].is_finite());
        }
    }
}
