use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{DobError, Result};

/// Per-joint carrier for angles, rates, torques and disturbances of the leg.
pub type JointVec = Vector2<f64>;

/// Condition-number cap on `M(θ)` beyond which a configuration is rejected.
pub const MASS_COND_CAP: f64 = 1e8;

/// Lumped inertial parameters of a two-link leg (hip = joint 1, knee = joint 2).
///
/// The raw link masses, centre-of-mass offsets and inertias only enter the
/// dynamics through these six combinations:
/// `X2 = m2 r2`, `Y2 = m2 h2`, `X1 = m1 r1 + m2 l1`, `Y1 = m1 h1`,
/// `J2 = I2 + m2 (r2² + h2²)`, `J1 = J2 + I1 + m1 (r1² + h1²) + m2 l1²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkParams {
    pub x1: f64,
    pub y1: f64,
    pub j1: f64,
    pub x2: f64,
    pub y2: f64,
    pub j2: f64,
    /// Thigh length (m). Not identified on the hardware; 0.40 m is a stand-in.
    #[serde(default = "default_thigh")]
    pub l1: f64,
    #[serde(default = "default_gravity")]
    pub g: f64,
}

fn default_thigh() -> f64 {
    0.40
}

fn default_gravity() -> f64 {
    9.81
}

impl TwoLinkParams {
    /// Identified parameters of the left exoskeleton leg.
    pub fn exo_left_leg() -> Self {
        Self {
            x1: 3.746,
            y1: 0.01,
            j1: 1.671,
            x2: 0.592,
            y2: 0.01,
            j2: 0.549,
            l1: default_thigh(),
            g: default_gravity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x1, self.y1, self.j1, self.x2, self.y2, self.j2, self.l1, self.g];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DobError::Config("two-link parameters must be finite".into()));
        }
        if self.j1 <= 0.0 || self.j2 <= 0.0 || self.l1 <= 0.0 || self.g <= 0.0 {
            return Err(DobError::Config(
                "two-link parameters need J1 > 0, J2 > 0, l1 > 0 and g > 0".into(),
            ));
        }
        Ok(())
    }

    /// Samples `θ2` over a full turn and checks that `M(θ)` stays positive
    /// definite with condition number under [`MASS_COND_CAP`]. `M` does not
    /// depend on `θ1`.
    pub fn check_admissible(&self, samples: usize) -> Result<()> {
        self.validate()?;
        let n = samples.max(2);
        for i in 0..n {
            let theta2 = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
            mass_condition(&self.mass_matrix(&JointVec::new(0.0, theta2)))?;
        }
        Ok(())
    }

    pub fn mass_matrix(&self, theta: &JointVec) -> Matrix2<f64> {
        let (s2, c2) = theta[1].sin_cos();
        let a = self.l1 * (self.x2 * c2 - self.y2 * s2);
        let m11 = self.j1 + 2.0 * a;
        let m12 = self.j2 + a;
        Matrix2::new(m11, m12, m12, self.j2)
    }

    /// Christoffel-symbol factorization, so `Ṁ − 2C` is skew-symmetric.
    /// `C θ̇` equals `[−h (2θ̇1θ̇2 + θ̇2²), h θ̇1²]` with `h = l1 (X2 s2 + Y2 c2)`.
    pub fn coriolis_matrix(&self, theta: &JointVec, thetadot: &JointVec) -> Matrix2<f64> {
        let (s2, c2) = theta[1].sin_cos();
        let h = self.l1 * (self.x2 * s2 + self.y2 * c2);
        Matrix2::new(
            -h * thetadot[1],
            -h * (thetadot[0] + thetadot[1]),
            h * thetadot[0],
            0.0,
        )
    }

    pub fn gravity(&self, theta: &JointVec) -> JointVec {
        let (s1, c1) = theta[0].sin_cos();
        let (s12, c12) = (theta[0] + theta[1]).sin_cos();
        let g2 = self.g * (self.x2 * s12 + self.y2 * c12);
        let g1 = self.g * (self.x1 * s1 + self.y1 * c1) + g2;
        JointVec::new(g1, g2)
    }
}

/// Mass, Coriolis and gravity terms of the leg at `(θ, θ̇)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLinkTerms {
    pub mass: Matrix2<f64>,
    pub coriolis: Matrix2<f64>,
    pub gravity: JointVec,
}

pub fn two_link_terms(theta: &JointVec, thetadot: &JointVec, p: &TwoLinkParams) -> TwoLinkTerms {
    TwoLinkTerms {
        mass: p.mass_matrix(theta),
        coriolis: p.coriolis_matrix(theta, thetadot),
        gravity: p.gravity(theta),
    }
}

/// Condition number of a symmetric 2×2 matrix, or `SingularMass` if it is
/// not positive definite or exceeds [`MASS_COND_CAP`].
pub fn mass_condition(m: &Matrix2<f64>) -> Result<f64> {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (lo, hi) = (mean - radius, mean + radius);
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 {
        return Err(DobError::SingularMass { cond: f64::INFINITY });
    }
    let cond = hi / lo;
    if cond > MASS_COND_CAP {
        return Err(DobError::SingularMass { cond });
    }
    Ok(cond)
}

pub(crate) fn checked_inverse(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    mass_condition(m)?;
    m.try_inverse()
        .ok_or(DobError::SingularMass { cond: f64::INFINITY })
}

/// `θ̈ = M(θ)⁻¹ (τ + d − C(θ,θ̇) θ̇ − G(θ))`.
pub fn forward_dynamics(
    theta: &JointVec,
    thetadot: &JointVec,
    tau: &JointVec,
    d: &JointVec,
    p: &TwoLinkParams,
) -> Result<JointVec> {
    let t = two_link_terms(theta, thetadot, p);
    let rhs = tau + d - t.coriolis * thetadot - t.gravity;
    let m_inv = checked_inverse(&t.mass)?;
    Ok(m_inv * rhs)
}

/// Inverse dynamics: the joint torque that produces `θ̈` with zero disturbance.
pub fn inverse_dynamics(
    theta: &JointVec,
    thetadot: &JointVec,
    thetaddot: &JointVec,
    p: &TwoLinkParams,
) -> JointVec {
    let t = two_link_terms(theta, thetadot, p);
    t.mass * thetaddot + t.coriolis * thetadot + t.gravity
}

/// Kinetic plus potential energy of the leg (potential zero at the hanging pose).
pub fn total_energy(theta: &JointVec, thetadot: &JointVec, p: &TwoLinkParams) -> f64 {
    let kinetic = 0.5 * thetadot.dot(&(p.mass_matrix(theta) * thetadot));
    // G = ∂V/∂θ for V = -g (X1 c1 - Y1 s1 + X2 c12 - Y2 s12)
    let (s1, c1) = theta[0].sin_cos();
    let (s12, c12) = (theta[0] + theta[1]).sin_cos();
    let potential = -p.g * (p.x1 * c1 - p.y1 * s1 + p.x2 * c12 - p.y2 * s12);
    kinetic + potential
}

/// Euler step of the augmented leg state `x = [d(2), θ(2), θ̇(2)]`.
/// The disturbance block is held constant.
pub fn exo_transition(x: &[f64; 6], tau: &JointVec, dt: f64, p: &TwoLinkParams) -> Result<[f64; 6]> {
    let d = JointVec::new(x[0], x[1]);
    let theta = JointVec::new(x[2], x[3]);
    let thetadot = JointVec::new(x[4], x[5]);
    let acc = forward_dynamics(&theta, &thetadot, tau, &d, p)?;
    Ok([
        x[0],
        x[1],
        x[2] + thetadot[0] * dt,
        x[3] + thetadot[1] * dt,
        x[4] + acc[0] * dt,
        x[5] + acc[1] * dt,
    ])
}

/// Classical fourth-order Runge-Kutta step of the leg with constant `τ + d`.
/// Only used for plant truth when a scenario asks for it.
pub fn rk4_step(
    theta: &JointVec,
    thetadot: &JointVec,
    tau: &JointVec,
    d: &JointVec,
    dt: f64,
    p: &TwoLinkParams,
) -> Result<(JointVec, JointVec)> {
    let f = |q: &JointVec, qd: &JointVec| forward_dynamics(q, qd, tau, d, p);
    let k1v = f(theta, thetadot)?;
    let k1q = *thetadot;
    let k2q = thetadot + k1v * (0.5 * dt);
    let k2v = f(&(theta + k1q * (0.5 * dt)), &k2q)?;
    let k3q = thetadot + k2v * (0.5 * dt);
    let k3v = f(&(theta + k2q * (0.5 * dt)), &k3q)?;
    let k4q = thetadot + k3v * dt;
    let k4v = f(&(theta + k3q * dt), &k4q)?;
    let q = theta + (k1q + 2.0 * k2q + 2.0 * k3q + k4q) * (dt / 6.0);
    let qd = thetadot + (k1v + 2.0 * k2v + 2.0 * k3v + k4v) * (dt / 6.0);
    Ok((q, qd))
}
