//! Synthetic operator-hand keypoints standing in for a learned hand-pose
//! detector: a human-scale copy of the hand model posed in the world, seen
//! by two virtual cameras with Gaussian detection noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::FusionError;
use crate::fusion::{CameraId, CameraView, KeypointSet, KEYPOINT_COUNT};
use crate::geom::{Pose, Vec3};
use crate::retarget::HandModel;

/// Human hand as the robot surrogate scaled down by the retarget scale, so
/// `α · v_i(q) = f_i(q)` holds exactly for noise-free keypoints.
#[derive(Clone, Debug)]
pub struct HumanHand {
    model: HandModel,
}

impl HumanHand {
    pub fn from_robot(robot: &HandModel, alpha: f64) -> Self {
        HumanHand {
            model: robot.scaled("human_hand", 1.0 / alpha),
        }
    }

    pub fn model(&self) -> &HandModel {
        &self.model
    }

    /// Palm-frame keypoints: wrist at the origin, then per finger the two
    /// joint origins, the midpoint of the distal link and the tip.
    pub fn local_keypoints(&self, angles: &[f64]) -> [Vec3; KEYPOINT_COUNT] {
        let mut pts = [Vec3::zeros(); KEYPOINT_COUNT];
        for (i, finger) in self.model.fingers().iter().enumerate() {
            let q = finger
                .joint_vector(angles[self.model.finger_range(i)].to_vec())
                .expect("finger slice matches finger dof");
            let joints = finger.joint_positions(&q).expect("valid finger vector");
            let tip = finger.forward_kinematics(&q).expect("valid finger vector").position;
            let last = *joints.last().unwrap();
            let base = 1 + 4 * i;
            pts[base] = joints[0];
            pts[base + 1] = joints.get(1).copied().unwrap_or((joints[0] + tip) / 2.0);
            pts[base + 2] = (last + tip) / 2.0;
            pts[base + 3] = tip;
        }
        pts
    }

    /// World-frame keypoints for a hand whose palm frame sits at `wrist`.
    pub fn keypoints(&self, angles: &[f64], wrist: &Pose) -> KeypointSet {
        let local = self.local_keypoints(angles);
        KeypointSet::new(local.map(|p| wrist.transform_point(&p))).expect("finite keypoints")
    }
}

/// Two fixed cameras with isotropic per-coordinate detection noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRig {
    pub axes: [Vec3; 2],
    pub noise_sigma: f64,
}

impl CameraRig {
    pub fn observe<R: Rng>(&self, truth: &KeypointSet, rng: &mut R) -> Result<[CameraView; 2], FusionError> {
        let noise = Normal::new(0.0, self.noise_sigma.max(0.0)).expect("non-negative sigma");
        let mut view = |camera, axis: Vec3| {
            let pts = truth.points().map(|p| {
                if self.noise_sigma > 0.0 {
                    p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
                } else {
                    p
                }
            });
            CameraView::new(camera, axis, Some(KeypointSet::new(pts)?))
        };
        Ok([view(CameraId::C1, self.axes[0])?, view(CameraId::C2, self.axes[1])?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;
    use crate::retarget::keypoint_vectors;

    #[test]
    fn noise_free_keypoints_scale_onto_robot_fingertips() {
        let robot = HandModel::builtin();
        let human = HumanHand::from_robot(&robot, 1.5);
        let q = vec![0.4, 0.3, 0.8, 0.9, 0.2, 0.1, 1.0, 1.2, 0.5, 0.6];
        let wrist = Pose::new(
            Rotation::from_axis_angle(&Vec3::new(0.2, 1.0, -0.4), 1.1),
            Vec3::new(0.3, -0.2, 1.1),
        );
        let v = keypoint_vectors(&human.keypoints(&q, &wrist)).unwrap();
        for i in 0..5 {
            let err = (v[i] * 1.5 - robot.fingertip(i, &q)).norm();
            assert!(err < 1e-9, "finger {i}: {err}");
        }
    }
}
