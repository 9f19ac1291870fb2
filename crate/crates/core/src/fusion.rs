//! Two-camera hand keypoint fusion with cosine reliability weighting.
//!
//! Each camera's weight is proportional to `|cos φ|`, where φ is the angle
//! between its optical axis and the palm normal. One weight pair is computed
//! per hand per frame and applied to all 21 keypoints.

use serde::{Deserialize, Serialize};

use crate::error::FusionError;
use crate::geom::Vec3;

pub const KEYPOINT_COUNT: usize = 21;

/// Below this cosine a camera is considered to see the palm edge-on.
pub const MIN_RELIABLE_COS: f64 = 1e-6;

/// MANO-style keypoint indices.
pub mod kp {
    pub const WRIST: usize = 0;
    pub const THUMB_TIP: usize = 4;
    pub const INDEX_BASE: usize = 5;
    pub const INDEX_TIP: usize = 8;
    pub const MIDDLE_BASE: usize = 9;
    pub const MIDDLE_TIP: usize = 12;
    pub const RING_TIP: usize = 16;
    pub const PINKY_BASE: usize = 17;
    pub const PINKY_TIP: usize = 20;
    /// Fingertips in thumb, index, middle, ring, pinky order.
    pub const TIPS: [usize; 5] = [THUMB_TIP, INDEX_TIP, MIDDLE_TIP, RING_TIP, PINKY_TIP];
}

/// 21 labeled 3-D hand keypoints in the world frame, meters.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    points: [Vec3; KEYPOINT_COUNT],
}

impl KeypointSet {
    pub fn new(points: [Vec3; KEYPOINT_COUNT]) -> Result<Self, FusionError> {
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(FusionError::BadKeypoints);
        }
        Ok(KeypointSet { points })
    }

    pub fn from_slice(points: &[Vec3]) -> Result<Self, FusionError> {
        let arr: [Vec3; KEYPOINT_COUNT] =
            points.try_into().map_err(|_| FusionError::BadKeypoints)?;
        Self::new(arr)
    }

    /// Builds from 63 flat coordinates (x, y, z per point).
    pub fn from_flat(coords: &[f64]) -> Result<Self, FusionError> {
        if coords.len() != KEYPOINT_COUNT * 3 {
            return Err(FusionError::BadKeypoints);
        }
        let pts: Vec<Vec3> = coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        Self::from_slice(&pts)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn points(&self) -> &[Vec3; KEYPOINT_COUNT] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    /// Estimated palm surface normal.
    pub fn palm_normal(&self) -> Result<Vec3, FusionError> {
        palm_normal(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CameraId {
    C1,
    C2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub camera: CameraId,
    axis: Vec3,
    pub keypoints: Option<KeypointSet>,
}

impl CameraView {
    pub fn new(camera: CameraId, axis: Vec3, keypoints: Option<KeypointSet>) -> Result<Self, FusionError> {
        let n = axis.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(FusionError::Degenerate("camera optical axis has zero length"));
        }
        // Leave axes that are already unit to rounding untouched.
        let axis = if (n - 1.0).abs() <= 4.0 * f64::EPSILON { axis } else { axis / n };
        Ok(CameraView {
            camera,
            axis,
            keypoints,
        })
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }
}

/// Normalized `(index_base − wrist) × (pinky_base − wrist)`.
pub fn palm_normal(k: &KeypointSet) -> Result<Vec3, FusionError> {
    let w = k.point(kp::WRIST);
    let a = k.point(kp::INDEX_BASE) - w;
    let b = k.point(kp::PINKY_BASE) - w;
    let n = a.cross(&b);
    let len = n.norm();
    let scale = a.norm() * b.norm();
    if !(len > 1e-12 * scale) || scale == 0.0 {
        return Err(FusionError::Degenerate("wrist, index base and pinky base are collinear"));
    }
    Ok(n / len)
}

/// Cosine reliability pair `(ρ₁, ρ₂)`; the pair sums to one.
pub fn reliability_weights(
    view1: &CameraView,
    view2: &CameraView,
    normal: &Vec3,
) -> Result<(f64, f64), FusionError> {
    let c1 = view1.axis.dot(normal).abs();
    let c2 = view2.axis.dot(normal).abs();
    if c1 <= MIN_RELIABLE_COS && c2 <= MIN_RELIABLE_COS {
        return Err(FusionError::NoReliableView);
    }
    let rho1 = c1 / (c1 + c2);
    Ok((rho1, 1.0 - rho1))
}

/// Fuses two views into one keypoint set. A missing view passes the other
/// through unchanged. The palm normal is taken from the mean of the two
/// detections, so the result is independent of view order.
pub fn fuse(view1: &CameraView, view2: &CameraView) -> Result<KeypointSet, FusionError> {
    match (&view1.keypoints, &view2.keypoints) {
        (None, None) => Err(FusionError::NoDetection),
        (Some(k), None) | (None, Some(k)) => Ok(k.clone()),
        (Some(k1), Some(k2)) => {
            let mean: Vec<Vec3> = k1
                .points
                .iter()
                .zip(&k2.points)
                .map(|(a, b)| (a + b) * 0.5)
                .collect();
            let normal = palm_normal(&KeypointSet::from_slice(&mean)?)?;
            let (r1, r2) = reliability_weights(view1, view2, &normal)?;
            let mut points = [Vec3::zeros(); KEYPOINT_COUNT];
            for (i, p) in points.iter_mut().enumerate() {
                *p = blend(&k1.points[i], &k2.points[i], r1, r2);
            }
            KeypointSet::new(points)
        }
    }
}

/// `r1*a + r2*b` computed as `a + r2*(b − a)` when `r1 ≥ r2` and mirrored
/// otherwise, which keeps each coordinate between `a` and `b` and makes the
/// result identical when the views are swapped.
fn blend(a: &Vec3, b: &Vec3, r1: f64, r2: f64) -> Vec3 {
    let mut out = Vec3::zeros();
    for i in 0..3 {
        let (x, y) = (a[i], b[i]);
        let v = if r1 > r2 || (r1 == r2 && x <= y) {
            x + r2 * (y - x)
        } else {
            y + r1 * (x - y)
        };
        out[i] = v.clamp(x.min(y), x.max(y));
    }
    out
}
