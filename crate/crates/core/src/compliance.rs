//! Torque-level compliance: end-effector wrench estimation, the impedance
//! torque law `τ_cmd = τ_g + Jᵀ F`, and the bimanual spring-damper coupling
//! that binds a follower arm to the leading arm's desired pose.
//!
//! All wrenches are world-frame, expressed at the end-effector origin.

use nalgebra::{DMatrix, DVector, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{ComplianceError, KinematicsError};
use crate::geom::{Pose, Rotation, Twist, Vec3};
use crate::kinematics::{JointVector, SerialChain};

/// Singular values below this are treated as lost directions.
pub const SINGULAR_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct WrenchEstimate {
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

impl WrenchEstimate {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(force: Vec3, torque: Vec3) -> Self {
        WrenchEstimate {
            force: force.into(),
            torque: torque.into(),
        }
    }

    pub fn from_force(force: Vec3) -> Self {
        Self::new(force, Vec3::zeros())
    }

    pub fn force(&self) -> Vec3 {
        Vec3::from(self.force)
    }

    pub fn torque(&self) -> Vec3 {
        Vec3::from(self.torque)
    }

    pub fn to_vector6(&self) -> Vector6<f64> {
        let [fx, fy, fz] = self.force;
        let [tx, ty, tz] = self.torque;
        Vector6::new(fx, fy, fz, tx, ty, tz)
    }

    pub fn from_vector6(v: &Vector6<f64>) -> Self {
        WrenchEstimate {
            force: [v[0], v[1], v[2]],
            torque: [v[3], v[4], v[5]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(&self.torque).all(|v| v.is_finite())
    }
}

/// Which end-effector wrench components the estimator solves for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WrenchBasis {
    /// Force and torque from the full 6×N Jacobian.
    Full,
    /// Force only, from the linear rows; torque is reported as zero.
    ForceOnly,
}

impl WrenchBasis {
    /// Full wrench when the arm can resolve it (N ≥ 6), force-only otherwise.
    pub fn default_for(chain: &SerialChain) -> Self {
        if chain.dof() >= 6 {
            WrenchBasis::Full
        } else {
            WrenchBasis::ForceOnly
        }
    }
}

fn check_len(chain: &SerialChain, v: &DVector<f64>) -> Result<(), KinematicsError> {
    if v.len() != chain.dof() {
        return Err(KinematicsError::LengthMismatch {
            expected: chain.dof(),
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(KinematicsError::NonFinite);
    }
    Ok(())
}

/// Truncated-SVD pseudoinverse.
pub fn truncated_pinv(m: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    m.clone()
        .svd(true, true)
        .pseudo_inverse(threshold)
        .expect("threshold is non-negative")
}

/// `F = pinv(Jᵀ)(τ_measured − τ_g)` with the default basis for the chain.
pub fn estimate_ee_wrench(
    chain: &SerialChain,
    q: &JointVector,
    tau_measured: &DVector<f64>,
    tau_g: &DVector<f64>,
) -> Result<WrenchEstimate, KinematicsError> {
    estimate_ee_wrench_with(chain, q, tau_measured, tau_g, WrenchBasis::default_for(chain))
}

pub fn estimate_ee_wrench_with(
    chain: &SerialChain,
    q: &JointVector,
    tau_measured: &DVector<f64>,
    tau_g: &DVector<f64>,
    basis: WrenchBasis,
) -> Result<WrenchEstimate, KinematicsError> {
    check_len(chain, tau_measured)?;
    check_len(chain, tau_g)?;
    let jac = chain.geometric_jacobian(q)?;
    let tau_ext = tau_measured - tau_g;
    match basis {
        WrenchBasis::Full => {
            let w = truncated_pinv(&jac.transpose(), SINGULAR_THRESHOLD) * tau_ext;
            Ok(WrenchEstimate::new(
                Vec3::new(w[0], w[1], w[2]),
                Vec3::new(w[3], w[4], w[5]),
            ))
        }
        WrenchBasis::ForceOnly => {
            let jl = jac.rows(0, 3).transpose();
            let f = truncated_pinv(&jl, SINGULAR_THRESHOLD) * tau_ext;
            Ok(WrenchEstimate::from_force(Vec3::new(f[0], f[1], f[2])))
        }
    }
}

/// `τ_cmd = τ_g + Jᵀ F`.
pub fn impedance_torque(
    chain: &SerialChain,
    q: &JointVector,
    f_desired: &WrenchEstimate,
    gravity: &Vec3,
) -> Result<DVector<f64>, KinematicsError> {
    let tau_g = chain.gravity_torques(q, gravity)?;
    let jac = chain.geometric_jacobian(q)?;
    let w = DVector::from_column_slice(f_desired.to_vector6().as_slice());
    Ok(tau_g + jac.transpose() * w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingParams {
    /// Spring gain, dimensionless (`k_p = λ / Δt²`).
    pub lambda: f64,
    /// Damper gain, dimensionless (`k_d = β / Δt`).
    pub beta_damp: f64,
    pub dt: f64,
}

impl Default for CouplingParams {
    fn default() -> Self {
        CouplingParams {
            lambda: 3.0,
            beta_damp: 0.5,
            dt: 0.01,
        }
    }
}

impl CouplingParams {
    pub fn validate(&self) -> Result<(), ComplianceError> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(ComplianceError::BadParams("lambda must be positive"));
        }
        if !(self.beta_damp >= 0.0) || !self.beta_damp.is_finite() {
            return Err(ComplianceError::BadParams("beta_damp must be non-negative"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(ComplianceError::BadParams("dt must be positive"));
        }
        Ok(())
    }

    pub fn kp(&self) -> f64 {
        self.lambda / (self.dt * self.dt)
    }

    pub fn kd(&self) -> f64 {
        self.beta_damp / self.dt
    }

    /// Damper gain giving a critically damped (non-overshooting) response.
    pub fn critical_beta(lambda: f64) -> f64 {
        2.0 * lambda.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingLaw {
    /// `ë = −k_p e − k_d ė`, integrated with backward Euler.
    #[default]
    SpringDamper,
    /// Direct assignment `e' = λ e + β ė`. Diverges for λ > 1; kept for
    /// comparison only.
    Literal,
}

/// Follower-minus-desired pose error: position difference and the rotation
/// vector of `R_desᵀ R_follower` (expressed in the desired frame).
pub fn coupling_error(follower: &Pose, desired: &Pose) -> Vector6<f64> {
    let dp = follower.position - desired.position;
    let dr = desired.rotation.inverse().compose(&follower.rotation).log();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Rate of the coupling error from world-frame twists (first order in the
/// rotation error).
pub fn coupling_error_rate(desired: &Pose, v_follower: &Twist, v_desired: &Twist) -> Vector6<f64> {
    let dv = v_follower.linear() - v_desired.linear();
    let dw = desired
        .rotation
        .inverse()
        .rotate(&(v_follower.angular() - v_desired.angular()));
    Vector6::new(dv.x, dv.y, dv.z, dw.x, dw.y, dw.z)
}

/// Follower pose sitting at error `e` from `desired`.
pub fn pose_from_error(desired: &Pose, e: &Vector6<f64>) -> Pose {
    let dr = Vec3::new(e[3], e[4], e[5]);
    let rotation = if dr == Vec3::zeros() {
        desired.rotation
    } else {
        desired.rotation.compose(&Rotation::exp(&dr))
    };
    Pose::new(rotation, desired.position + Vec3::new(e[0], e[1], e[2]))
}

/// One update of the coupling law in error coordinates: `(e, ė) → (e', ė')`.
pub fn step_error(
    e: &Vector6<f64>,
    v: &Vector6<f64>,
    p: &CouplingParams,
    law: CouplingLaw,
) -> (Vector6<f64>, Vector6<f64>) {
    match law {
        CouplingLaw::SpringDamper => {
            // Backward Euler on ë = −k_p e − k_d ė:
            //   v' = (v − Δt k_p e) / (1 + Δt k_d + Δt² k_p)
            let v_next = (v - e * (p.kp() * p.dt)) / (1.0 + p.beta_damp + p.lambda);
            (e + v_next * p.dt, v_next)
        }
        CouplingLaw::Literal => {
            let e_next = e * p.lambda + v * p.beta_damp;
            let v_next = (e_next - e) / p.dt;
            (e_next, v_next)
        }
    }
}

/// Virtual energy `½ k_p ‖e‖² + ½ ‖ė‖²` of the coupling state.
pub fn coupling_energy(e: &Vector6<f64>, v: &Vector6<f64>, p: &CouplingParams) -> f64 {
    0.5 * p.kp() * e.norm_squared() + 0.5 * v.norm_squared()
}

/// Next commanded follower pose under the spring-damper coupling law.
///
/// The desired pose is advanced by its twist over one period, so a follower
/// already at the desired pose and moving with it stays locked on.
pub fn coupled_follower_target(
    x_l: &Pose,
    v_l: &Twist,
    x_r_des: &Pose,
    v_r_des: &Twist,
    p: &CouplingParams,
) -> Pose {
    coupled_follower_target_with(x_l, v_l, x_r_des, v_r_des, p, CouplingLaw::SpringDamper)
}

pub fn coupled_follower_target_with(
    x_l: &Pose,
    v_l: &Twist,
    x_r_des: &Pose,
    v_r_des: &Twist,
    p: &CouplingParams,
    law: CouplingLaw,
) -> Pose {
    let e = coupling_error(x_l, x_r_des);
    let v = coupling_error_rate(x_r_des, v_l, v_r_des);
    let (e_next, _) = step_error(&e, &v, p, law);
    pose_from_error(&advance(x_r_des, v_r_des, p.dt), &e_next)
}

fn advance(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    if *twist == Twist::zero() {
        return *pose;
    }
    Pose::new(
        Rotation::exp(&(twist.angular() * dt)).compose(&pose.rotation),
        pose.position + twist.linear() * dt,
    )
}

/// Stateful coupling integrator used by the control loop. It keeps the error
/// and its rate between ticks so the virtual energy is tracked exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingFilter {
    e: Vector6<f64>,
    v: Vector6<f64>,
    law: CouplingLaw,
}

impl CouplingFilter {
    pub fn new(follower: &Pose, desired: &Pose, law: CouplingLaw) -> Self {
        CouplingFilter {
            e: coupling_error(follower, desired),
            v: Vector6::zeros(),
            law,
        }
    }

    pub fn with_state(e: Vector6<f64>, v: Vector6<f64>, law: CouplingLaw) -> Self {
        CouplingFilter { e, v, law }
    }

    pub fn error(&self) -> &Vector6<f64> {
        &self.e
    }

    pub fn rate(&self) -> &Vector6<f64> {
        &self.v
    }

    pub fn energy(&self, p: &CouplingParams) -> f64 {
        coupling_energy(&self.e, &self.v, p)
    }

    /// Advances one period and returns the follower pose relative to the
    /// desired pose at the new tick.
    pub fn step(&mut self, desired_next: &Pose, p: &CouplingParams) -> Pose {
        let (e, v) = step_error(&self.e, &self.v, p, self.law);
        self.e = e;
        self.v = v;
        pose_from_error(desired_next, &self.e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Joint;
    use std::f64::consts::FRAC_PI_2;

    fn one_link() -> SerialChain {
        SerialChain::new(
            "one",
            Pose::identity(),
            vec![Joint {
                name: "j".into(),
                origin: Pose::identity(),
                axis: Vec3::z(),
                lower: -3.0,
                upper: 3.0,
                mass: 0.0,
                com: Vec3::zeros(),
            }],
            Pose::from_translation(Vec3::x()),
        )
        .unwrap()
    }

    #[test]
    fn zero_force_is_pure_gravity_compensation() {
        let c = one_link();
        let q = c.zeros();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let tau = impedance_torque(&c, &q, &WrenchEstimate::zero(), &g).unwrap();
        assert_eq!(tau, c.gravity_torques(&q, &g).unwrap());
    }

    #[test]
    fn lever_arm_torque() {
        let c = one_link();
        let tau = impedance_torque(
            &c,
            &c.zeros(),
            &WrenchEstimate::from_force(Vec3::y()),
            &Vec3::zeros(),
        )
        .unwrap();
        assert!((tau[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_external_load_gives_zero_wrench() {
        let c = one_link();
        let t = DVector::from_vec(vec![0.7]);
        let w = estimate_ee_wrench(&c, &c.zeros(), &t, &t).unwrap();
        assert_eq!(w, WrenchEstimate::zero());
    }

    #[test]
    fn length_mismatch_is_error() {
        let c = one_link();
        let t = DVector::from_vec(vec![0.0, 1.0]);
        assert!(estimate_ee_wrench(&c, &c.zeros(), &t, &t).is_err());
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let x = Pose::new(Rotation::from_axis_angle(&Vec3::x(), FRAC_PI_2), Vec3::new(0.3, -0.1, 1.0));
        let out = coupled_follower_target(&x, &Twist::zero(), &x, &Twist::zero(), &CouplingParams::default());
        assert_eq!(out, x);
    }

    #[test]
    fn literal_law_amplifies_error() {
        let p = CouplingParams::default();
        let mut e = Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut v = Vector6::zeros();
        for _ in 0..10 {
            (e, v) = step_error(&e, &v, &p, CouplingLaw::Literal);
        }
        assert!(e.norm() > 1.0);
    }

    #[test]
    fn bad_params_rejected() {
        let p = CouplingParams { lambda: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = CouplingParams { dt: -1.0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
