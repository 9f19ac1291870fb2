use serde::{Deserialize, Serialize};

use super::contact::ContactSurface;
use crate::geom::{Pose, Vec3};

/// Needle direction: the x-axis of the end-effector (syringe grasp) frame.
pub fn needle_axis(pose: &Pose) -> Vec3 {
    pose.rotation.rotate(&Vec3::x())
}

/// `(in-plane deviation, incidence)` in radians: the angle between the
/// needle axis and the imaging plane, and between the needle axis and the
/// surface tangent plane at the needle position.
pub fn needle_angle_check(pose: &Pose, surface: &ContactSurface, image_normal: &Vec3) -> (f64, f64) {
    let a = needle_axis(pose);
    let n_img = image_normal.normalize();
    let n_surf = surface.normal_at(&pose.position);
    let deviation = a.dot(&n_img).abs().min(1.0).asin();
    let incidence = a.dot(&n_surf).abs().min(1.0).asin();
    (deviation, incidence)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeedleAttempt {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub samples: usize,
    pub max_deviation_deg: f64,
    pub min_incidence_deg: f64,
    pub max_incidence_deg: f64,
    pub mean_incidence_deg: f64,
}

/// Accumulates angle samples for one attempt window.
#[derive(Clone, Debug, Default)]
pub(crate) struct AttemptAccumulator {
    samples: usize,
    max_dev: f64,
    min_inc: f64,
    max_inc: f64,
    sum_inc: f64,
}

impl AttemptAccumulator {
    pub fn push(&mut self, deviation: f64, incidence: f64) {
        if self.samples == 0 {
            self.min_inc = incidence;
            self.max_inc = incidence;
        }
        self.samples += 1;
        self.max_dev = self.max_dev.max(deviation);
        self.min_inc = self.min_inc.min(incidence);
        self.max_inc = self.max_inc.max(incidence);
        self.sum_inc += incidence;
    }

    pub fn finish(&self, index: usize, window: [f64; 2]) -> NeedleAttempt {
        let n = self.samples.max(1) as f64;
        NeedleAttempt {
            index,
            start_s: window[0],
            end_s: window[1],
            samples: self.samples,
            max_deviation_deg: self.max_dev.to_degrees(),
            min_incidence_deg: self.min_inc.to_degrees(),
            max_incidence_deg: self.max_inc.to_degrees(),
            mean_incidence_deg: (self.sum_inc / n).to_degrees(),
        }
    }
}
