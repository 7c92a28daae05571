//! Augmented PD control with feedforward and disturbance compensation, and
//! the ultimate bound of the tracking error under a bounded lumped error.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, two_link_terms, JointVec, OneDofParams, TwoLinkParams};
use crate::error::{DobError, Result};
use crate::observers::AugmentedState;

/// Diagonal PD gains, one entry per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

impl PdGains {
    pub fn new(kp: Vec<f64>, kd: Vec<f64>) -> Result<Self> {
        let g = Self { kp, kd };
        g.validate()?;
        Ok(g)
    }

    /// Gains used on the exoskeleton: `K_p = 5000 I`, `K_d = 100 I`.
    pub fn exo_default() -> Self {
        Self { kp: vec![5000.0; 2], kd: vec![100.0; 2] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kp.len() != self.kd.len() || self.kp.is_empty() {
            return Err(DobError::Config("kp and kd need the same non-zero length".into()));
        }
        if self.kp.iter().chain(&self.kd).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(DobError::Config("PD gains must be positive".into()));
        }
        Ok(())
    }

    pub fn joints(&self) -> usize {
        self.kp.len()
    }

    pub fn kp_min(&self) -> f64 {
        self.kp.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn kd_min(&self) -> f64 {
        self.kd.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn kp2(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&JointVec::new(self.kp[0], self.kp[1]))
    }

    fn kd2(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&JointVec::new(self.kd[0], self.kd[1]))
    }
}

/// Desired angle, rate and acceleration of every joint at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredTraj<V> {
    pub theta: V,
    pub thetadot: V,
    pub thetaddot: V,
}

/// `τ_ff = M(θ̂) θ̈_d + C(θ̂, θ̇̂) θ̇_d + G(θ̂)`.
pub fn feedforward(
    theta: &JointVec,
    thetadot: &JointVec,
    des: &DesiredTraj<JointVec>,
    p: &TwoLinkParams,
) -> JointVec {
    let t = two_link_terms(theta, thetadot, p);
    t.mass * des.thetaddot + t.coriolis * des.thetadot + t.gravity
}

/// Leg torque `τ = τ_ff + τ_fb − d̂` from the augmented estimate
/// `x̂ = [d̂(2), θ̂(2), θ̇̂(2)]`.
pub fn augmented_pd(
    x_hat: &AugmentedState,
    des: &DesiredTraj<JointVec>,
    gains: &PdGains,
    p: &TwoLinkParams,
) -> Result<JointVec> {
    if x_hat.dim() != 6 || gains.joints() != 2 {
        return Err(DobError::Dimension("leg controller needs a 6-state estimate and 2 joint gains".into()));
    }
    let x = &x_hat.x;
    let d_hat = JointVec::new(x[0], x[1]);
    let theta = JointVec::new(x[2], x[3]);
    let thetadot = JointVec::new(x[4], x[5]);
    Ok(augmented_pd_parts(&d_hat, &theta, &thetadot, des, gains, p))
}

/// Same control law with the estimates passed separately.
pub fn augmented_pd_parts(
    d_hat: &JointVec,
    theta: &JointVec,
    thetadot: &JointVec,
    des: &DesiredTraj<JointVec>,
    gains: &PdGains,
    p: &TwoLinkParams,
) -> JointVec {
    let ff = feedforward(theta, thetadot, des, p);
    let fb = -gains.kd2() * (thetadot - des.thetadot) - gains.kp2() * (theta - des.theta);
    ff + fb - d_hat
}

/// Feedforward of the 1-DOF joint: `I θ̈_d + b θ̇_d + k θ_d + m g sin θ̂`.
pub fn one_dof_feedforward(theta_hat: f64, des: &DesiredTraj<f64>, p: &OneDofParams) -> f64 {
    p.inertia * des.thetaddot + p.damping * des.thetadot + p.stiffness * des.theta + p.gravity_torque(theta_hat)
}

/// 1-DOF torque from `x̂ = [d̂, θ̇̂, θ̂]`.
pub fn one_dof_pd(x_hat: &AugmentedState, des: &DesiredTraj<f64>, gains: &PdGains, p: &OneDofParams) -> Result<f64> {
    if x_hat.dim() != 3 || gains.joints() != 1 {
        return Err(DobError::Dimension("1-DOF controller needs a 3-state estimate and 1 joint gain".into()));
    }
    Ok(one_dof_pd_parts(x_hat.x[0], x_hat.x[1], x_hat.x[2], des, gains, p))
}

/// 1-DOF control law with the estimates passed separately.
pub fn one_dof_pd_parts(
    d_hat: f64,
    rate: f64,
    angle: f64,
    des: &DesiredTraj<f64>,
    gains: &PdGains,
    p: &OneDofParams,
) -> f64 {
    let fb = -gains.kd[0] * (rate - des.thetadot) - gains.kp[0] * (angle - des.theta);
    one_dof_feedforward(angle, des, p) + fb - d_hat
}

/// Symmetric clamp applied element-wise when a limit is configured.
pub fn saturate(tau: f64, limit: Option<f64>) -> f64 {
    match limit {
        Some(l) => tau.clamp(-l, l),
        None => tau,
    }
}

/// Constants of the ultimate-bound estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Bound on the lumped error `‖l_e‖` (N·m).
    pub l_e_bar: f64,
    /// Lyapunov cross-term weight.
    pub eps: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if [self.l_e_bar, self.eps, self.alpha1, self.alpha2]
            .iter()
            .any(|&v| !(v > 0.0) || !v.is_finite())
        {
            return Err(DobError::Config("bound inputs must be positive".into()));
        }
        Ok(())
    }

    /// `α₁ ‖e‖² + α₂ ‖ė‖²`.
    pub fn quadratic_form(&self, e: &[f64], edot: &[f64]) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        self.alpha1 * sq(e) + self.alpha2 * sq(edot)
    }
}

/// Radius `κ = (l̄²/2) (1/λ_min(K_d) + ε/λ_min(K_p))` of the invariant set
/// `{α₁‖e‖² + α₂‖ė‖² ≤ κ}`.
pub fn ultimate_bound(gains: &PdGains, b: &BoundInputs) -> f64 {
    0.5 * b.l_e_bar * b.l_e_bar * (1.0 / gains.kd_min() + b.eps / gains.kp_min())
}

/// Leg tracking error under an injected lumped error.
///
/// The plant is driven by `τ = τ_ff(θ) − K_d ė − K_p e + l_e(t)` with exact
/// state knowledge, which gives `M ë + C ė + K_d ė + K_p e + l_e' = 0` with
/// `l_e' = −l_e(t)`. Integrated with RK4; returns `(e, ė)` at every step.
pub fn simulate_injected_lumped_error<F>(
    p: &TwoLinkParams,
    gains: &PdGains,
    desired: impl Fn(f64) -> DesiredTraj<JointVec>,
    lumped: F,
    e0: JointVec,
    edot0: JointVec,
    dt: f64,
    steps: usize,
) -> Result<Vec<(JointVec, JointVec)>>
where
    F: Fn(f64) -> JointVec,
{
    gains.validate()?;
    let des0 = desired(0.0);
    let mut theta = des0.theta + e0;
    let mut thetadot = des0.thetadot + edot0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push((e0, edot0));
    for k in 0..steps {
        let t = k as f64 * dt;
        let des = desired(t);
        let tau = augmented_pd_parts(&JointVec::zeros(), &theta, &thetadot, &des, gains, p) + lumped(t);
        let (q, qd) = rk4_step(&theta, &thetadot, &tau, &JointVec::zeros(), dt, p)?;
        theta = q;
        thetadot = qd;
        let des = desired(t + dt);
        out.push((theta - des.theta, thetadot - des.thetadot));
    }
    Ok(out)
}
