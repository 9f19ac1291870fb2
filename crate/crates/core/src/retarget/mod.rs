//! Human-hand to robot-hand mapping: keypoint-vector retargeting and
//! grasp-template snapping.

mod hand;
mod solver;
mod templates;

pub use hand::{keypoint_vectors, palm_frame, HandModel, HAND_FORMAT};
pub use solver::{objective, retarget, RetargetParams};
pub use templates::{
    snap_to_template, ActiveSet, GraspTemplate, GraspTemplateLibrary, TemplateHand,
    TemplateSnapper, SWITCH_RATIO, TEMPLATE_FORMAT,
};
