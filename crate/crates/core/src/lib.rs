//! Bimanual teleoperation control stack for a simulated two-arm robot.
//!
//! The pipeline runs operator input (hand poses, pedals, two-camera hand
//! keypoints) through clutch-relative pose mapping, keypoint fusion and
//! retargeting, grasp-template snapping, impedance and bimanual coupling
//! laws, and a deterministic kinematic simulator with scripted scenarios.

pub mod compliance;
pub mod error;
mod format;
pub mod fusion;
pub mod geom;
pub mod kinematics;
pub mod retarget;
pub mod runner;
pub mod side;
pub mod sim;
pub mod synthetic;
pub mod teleop;

pub use error::{Error, Result};
pub use geom::{Pose, Rotation, Twist, Vec3};
pub use side::{PerSide, Side};
