use serde::{Deserialize, Serialize};

use crate::error::{DobError, Result};

/// Coulomb-viscous-Stribeck friction parameters of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StribeckParams {
    /// Coulomb torque (N·m).
    pub tau_c: f64,
    /// Static (breakaway) torque (N·m).
    pub tau_s: f64,
    /// Stribeck rate (rad/s).
    pub thetadot_s: f64,
    /// Viscous coefficient (N·m·s/rad).
    pub eta_v: f64,
}

impl StribeckParams {
    pub fn exo_hip() -> Self {
        Self { tau_c: 9.964, tau_s: 6.141, thetadot_s: 19.311, eta_v: 3.967 }
    }

    pub fn exo_knee() -> Self {
        Self { tau_c: 2.582, tau_s: 6.216, thetadot_s: 2.886, eta_v: 6.495 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_c >= 0.0
            && self.tau_s >= 0.0
            && self.thetadot_s > 0.0
            && self.eta_v >= 0.0
            && [self.tau_c, self.tau_s, self.thetadot_s, self.eta_v].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(DobError::Config(format!("invalid Stribeck parameters {self:?}")))
        }
    }
}

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(τ_c + (τ_s − τ_c) e^{−|θ̇|/θ̇_s}) sgn(θ̇) + η_v θ̇`.
///
/// The exponent uses `|θ̇|` so the curve is odd in `θ̇` and bounded for
/// negative rates.
pub fn stribeck_friction(thetadot: f64, p: &StribeckParams) -> f64 {
    let decay = (-thetadot.abs() / p.thetadot_s).exp();
    (p.tau_c + (p.tau_s - p.tau_c) * decay) * sgn(thetadot) + p.eta_v * thetadot
}
