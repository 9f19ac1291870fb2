//! Keypoint-vector retargeting:
//!
//! ```text
//! min_q  Σ_i ‖α v_i − f_i(q)‖²  +  β ‖q − q_prev‖²
//! ```
//!
//! solved by Gauss-Newton with Levenberg damping, warm-started at `q_prev`.
//! Candidates are clamped to joint limits and only accepted when they lower
//! the objective, so the result never scores worse than the warm start.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::hand::HandModel;
use crate::error::{KinematicsError, RetargetError};
use crate::geom::Vec3;
use crate::kinematics::JointVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetargetParams {
    /// Human-to-robot keypoint vector scale.
    pub alpha: f64,
    /// Weight of the temporal smoothness term.
    pub smoothness: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tolerance: f64,
    pub initial_damping: f64,
}

impl Default for RetargetParams {
    fn default() -> Self {
        RetargetParams {
            alpha: 1.5,
            smoothness: 0.1,
            max_iterations: 25,
            tolerance: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

impl RetargetParams {
    pub fn validate(&self) -> Result<(), RetargetError> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(RetargetError::BadParams("alpha must be positive"));
        }
        if !(self.smoothness >= 0.0) || !self.smoothness.is_finite() {
            return Err(RetargetError::BadParams("smoothness weight must be non-negative"));
        }
        if !(self.initial_damping > 0.0) {
            return Err(RetargetError::BadParams("initial damping must be positive"));
        }
        Ok(())
    }
}

const MAX_DAMPING: f64 = 1e10;

/// Value of the retargeting objective at `q`.
pub fn objective(
    model: &HandModel,
    v: &[Vec3],
    q: &[f64],
    q_prev: &[f64],
    p: &RetargetParams,
) -> f64 {
    let data: f64 = v
        .iter()
        .enumerate()
        .map(|(i, vi)| (vi * p.alpha - model.fingertip(i, q)).norm_squared())
        .sum();
    let smooth: f64 = q.iter().zip(q_prev).map(|(a, b)| (a - b) * (a - b)).sum();
    data + p.smoothness * smooth
}

fn check_inputs(
    v: &[Vec3],
    q_prev: &JointVector,
    model: &HandModel,
    p: &RetargetParams,
) -> Result<(), RetargetError> {
    p.validate()?;
    model.check(q_prev)?;
    if v.len() != model.finger_count() {
        return Err(RetargetError::VectorCount {
            expected: model.finger_count(),
            got: v.len(),
        });
    }
    if v.iter().any(|x| x.iter().any(|c| !c.is_finite())) {
        return Err(KinematicsError::NonFinite.into());
    }
    Ok(())
}

pub fn retarget(
    v: &[Vec3],
    q_prev: &JointVector,
    model: &HandModel,
    p: &RetargetParams,
) -> Result<JointVector, RetargetError> {
    check_inputs(v, q_prev, model, p)?;
    let n = model.dof();
    let fingers = model.finger_count();
    let prev = q_prev.angles();
    let mut q = prev.to_vec();
    model.clamp(&mut q);
    let mut f = objective(model, v, &q, prev, p);
    let mut mu = p.initial_damping;
    let sqrt_beta = p.smoothness.sqrt();

    for _ in 0..p.max_iterations {
        if f == 0.0 {
            break;
        }
        let rows = 3 * fingers + n;
        let mut r = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, n);
        for i in 0..fingers {
            let res = model.fingertip(i, &q) - v[i] * p.alpha;
            r.rows_mut(3 * i, 3).copy_from(&res);
            let range = model.finger_range(i);
            let ji = model.fingertip_jacobian(i, &q);
            jac.view_mut((3 * i, range.start), (3, range.len())).copy_from(&ji);
        }
        for k in 0..n {
            r[3 * fingers + k] = sqrt_beta * (q[k] - prev[k]);
            jac[(3 * fingers + k, k)] = sqrt_beta;
        }
        let g = jac.transpose() * &r;
        let h = jac.transpose() * &jac;

        let mut accepted = None;
        while mu <= MAX_DAMPING {
            let damped = &h + DMatrix::identity(n, n) * mu;
            let step = damped.cholesky().map(|c| c.solve(&(-&g)));
            if let Some(step) = step {
                let mut cand: Vec<f64> = q.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
                model.clamp(&mut cand);
                let fc = objective(model, v, &cand, prev, p);
                if fc < f {
                    mu = (mu / 10.0).max(1e-12);
                    accepted = Some((cand, fc));
                    break;
                }
            }
            mu *= 10.0;
        }
        let Some((cand, fc)) = accepted else {
            break;
        };
        let decrease = f - fc;
        q = cand;
        f = fc;
        if decrease < p.tolerance {
            break;
        }
    }
    Ok(JointVector::tagged(model.name(), q))
}
