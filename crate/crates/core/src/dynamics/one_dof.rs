use serde::{Deserialize, Serialize};

use crate::error::{DobError, Result};

/// Single rotary joint with spring, damper and gravity load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneDofParams {
    pub inertia: f64,
    pub mass: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub length: f64,
    pub gravity: f64,
}

impl Default for OneDofParams {
    fn default() -> Self {
        Self {
            inertia: 0.1,
            mass: 0.1,
            stiffness: 0.1,
            damping: 1.0,
            length: 0.2,
            gravity: 9.81,
        }
    }
}

impl OneDofParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.inertia, self.mass, self.stiffness, self.damping, self.length, self.gravity];
        if all.iter().any(|v| !v.is_finite()) || self.inertia <= 0.0 {
            return Err(DobError::Config(format!("invalid one-dof parameters {self:?}")));
        }
        Ok(())
    }

    /// Gravity load `m g sin θ`. The same term is used by the plant and by the
    /// controller feedforward so that nominal cancellation is exact.
    pub fn gravity_torque(&self, theta: f64) -> f64 {
        self.mass * self.gravity * theta.sin()
    }
}

/// Discrete map of the augmented state `x = [d, θ̇, θ]` under torque `u`:
///
/// ```text
/// d'  = d
/// θ̇' = (Δt/I) (u + d + ((I − bΔt)/Δt) θ̇ − kθ − m g sin θ)
/// θ'  = θ̇ Δt + θ
/// ```
pub fn one_dof_transition(x: &[f64; 3], u: f64, dt: f64, p: &OneDofParams) -> [f64; 3] {
    let [d, thetadot, theta] = *x;
    let next_rate = (dt / p.inertia)
        * (u + d + ((p.inertia - p.damping * dt) / dt) * thetadot
            - p.stiffness * theta
            - p.gravity_torque(theta));
    [d, next_rate, thetadot * dt + theta]
}
