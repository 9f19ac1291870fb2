//! Rigid-body primitives: unit-quaternion rotations, poses and twists.
//!
//! Rotations are stored as unit quaternions and canonicalized so that the
//! scalar part is non-negative. Matrices only appear when a caller asks for
//! them (FK composition oracles, Jacobian assembly).

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::GeomError;

pub type Vec3 = Vector3<f64>;

/// Unit quaternion rotation with `w >= 0`.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

fn canonical(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let u = UnitQuaternion::new_normalize(q);
    if u.w < 0.0 {
        UnitQuaternion::new_unchecked(-u.into_inner())
    } else {
        u
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from raw quaternion components, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeomError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeomError::DegenerateQuaternion);
        }
        // Already unit to rounding: keep the bits so text round trips are exact.
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            let q = if w < 0.0 { -q } else { q };
            return Ok(Rotation(UnitQuaternion::new_unchecked(q)));
        }
        Ok(Rotation(canonical(q)))
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-15 || angle == 0.0 {
            return Self::identity();
        }
        let u = Unit::new_unchecked(axis / n);
        Rotation(canonical(UnitQuaternion::from_axis_angle(&u, angle).into_inner()))
    }

    /// Exponential map: rotation vector (axis * angle) to rotation.
    pub fn exp(v: &Vec3) -> Self {
        Rotation(canonical(UnitQuaternion::from_scaled_axis(*v).into_inner()))
    }

    /// Logarithm: the rotation vector with angle in `[0, pi]`.
    pub fn log(&self) -> Vec3 {
        self.0.scaled_axis()
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_matrix(m);
        Rotation(canonical(UnitQuaternion::from_rotation_matrix(&r).into_inner()))
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn inverse(&self) -> Self {
        Rotation(canonical(self.0.inverse().into_inner()))
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(canonical((self.0 * other.0).into_inner()))
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Geodesic angle between two rotations, radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.0.quaternion().norm()
    }

    pub fn as_unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [w, x, y, z] = self.wxyz();
        write!(f, "Rotation(w={w}, x={x}, y={y}, z={z})")
    }
}

/// Rigid transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub position: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            position: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, position: Vec3) -> Self {
        Pose { rotation, position }
    }

    pub fn from_translation(position: Vec3) -> Self {
        Pose {
            rotation: Rotation::identity(),
            position,
        }
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Pose {
            rotation,
            position: Vec3::zeros(),
        }
    }

    /// `self ∘ other`: applies `other` first, expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            position: self.position + self.rotation.rotate(&other.position),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            position: -r_inv.rotate(&self.position),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.rotation.rotate(p)
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.to_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    /// Task-space error from `self` to `target`: position difference and the
    /// world-frame rotation vector of `R_target * R_selfᵀ`.
    pub fn error_to(&self, target: &Pose) -> Vector6<f64> {
        let dp = target.position - self.position;
        let dr = target.rotation.compose(&self.rotation.inverse()).log();
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.wxyz().iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Spatial velocity; both parts in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: [f64; 3],
    pub angular: [f64; 3],
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Twist {
            linear: linear.into(),
            angular: angular.into(),
        }
    }

    pub fn linear(&self) -> Vec3 {
        Vec3::from(self.linear)
    }

    pub fn angular(&self) -> Vec3 {
        Vec3::from(self.angular)
    }

    /// Finite-difference twist taking `from` to `to` over `dt`.
    pub fn between(from: &Pose, to: &Pose, dt: f64) -> Twist {
        let lin = (to.position - from.position) / dt;
        let ang = to.rotation.compose(&from.rotation.inverse()).log() / dt;
        Twist::new(lin, ang)
    }
}

/// Serializable pose as `position` plus `rotation = [w, x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub rotation: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Default for PoseSpec {
    fn default() -> Self {
        PoseSpec {
            position: [0.0; 3],
            rotation: identity_wxyz(),
        }
    }
}

impl PoseSpec {
    pub fn to_pose(&self) -> Result<Pose, GeomError> {
        let [w, x, y, z] = self.rotation;
        Ok(Pose::new(
            Rotation::from_wxyz(w, x, y, z)?,
            Vec3::from(self.position),
        ))
    }
}

impl From<&Pose> for PoseSpec {
    fn from(p: &Pose) -> Self {
        PoseSpec {
            position: p.position.into(),
            rotation: p.rotation.wxyz(),
        }
    }
}

/// Unit-normalizes `v`, failing on zero or non-finite input.
pub fn unit(v: &Vec3) -> Result<Vec3, GeomError> {
    let n = v.norm();
    if !n.is_finite() || n < 1e-12 {
        return Err(GeomError::Degenerate("zero-length direction"));
    }
    Ok(v / n)
}
