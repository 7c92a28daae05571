use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{sgn, stribeck_friction, StribeckParams};
use crate::error::{DobError, Result};

/// True disturbance acting on one joint.
///
/// Every kind adds zero-mean Gaussian noise with standard deviation
/// `noise_std`, drawn once per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceProfile {
    /// `coulomb·sgn(θ̇) + viscous·θ̇ + w`.
    CoulombViscous {
        coulomb: f64,
        viscous: f64,
        noise_std: f64,
    },
    /// `scale · τ_fri(θ̇) + w`; `scale = −1` makes the friction oppose motion.
    Stribeck {
        params: StribeckParams,
        scale: f64,
        noise_std: f64,
    },
    /// Rectangular pulses of `magnitude` lasting `width` steps, repeating
    /// every `period` steps from step `start`.
    ImpulseTrain {
        magnitude: f64,
        width: usize,
        period: usize,
        start: usize,
        noise_std: f64,
    },
    /// Gait-synchronous `amplitude·sin(2π f t + phase)` clipped to `±cap`.
    ElasticPeriodic {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        cap: f64,
        noise_std: f64,
    },
    Constant {
        value: f64,
        noise_std: f64,
    },
}

impl DisturbanceProfile {
    /// Friction disturbance used in the 1-DOF study: `20 sgn(θ̇) + 0.5 θ̇ + N(0, 0.25)`.
    pub fn paper_friction() -> Self {
        Self::CoulombViscous { coulomb: 20.0, viscous: 0.5, noise_std: 0.5 }
    }

    pub fn noise_std(&self) -> f64 {
        match self {
            Self::CoulombViscous { noise_std, .. }
            | Self::Stribeck { noise_std, .. }
            | Self::ImpulseTrain { noise_std, .. }
            | Self::ElasticPeriodic { noise_std, .. }
            | Self::Constant { noise_std, .. } => *noise_std,
        }
    }

    /// Same profile with the additive noise switched off.
    pub fn noise_free(&self) -> Self {
        let mut p = self.clone();
        match &mut p {
            Self::CoulombViscous { noise_std, .. }
            | Self::Stribeck { noise_std, .. }
            | Self::ImpulseTrain { noise_std, .. }
            | Self::ElasticPeriodic { noise_std, .. }
            | Self::Constant { noise_std, .. } => *noise_std = 0.0,
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.noise_std();
        if !(ns >= 0.0) || !ns.is_finite() {
            return Err(DobError::Config(format!("noise_std must be finite and ≥ 0, got {ns}")));
        }
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        let ok = match self {
            Self::CoulombViscous { coulomb, viscous, .. } => finite(&[*coulomb, *viscous]),
            Self::Stribeck { params, scale, .. } => {
                params.validate()?;
                finite(&[*scale])
            }
            Self::ImpulseTrain { magnitude, width, period, .. } => {
                finite(&[*magnitude]) && *period > 0 && width <= period
            }
            Self::ElasticPeriodic { amplitude, frequency, phase, cap, .. } => {
                finite(&[*amplitude, *frequency, *phase, *cap]) && *cap >= 0.0
            }
            Self::Constant { value, .. } => finite(&[*value]),
        };
        if ok {
            Ok(())
        } else {
            Err(DobError::Config(format!("invalid disturbance parameters: {self:?}")))
        }
    }

    /// Noise-free part of the disturbance.
    pub fn signal(&self, thetadot: f64, k: usize, dt: f64) -> f64 {
        match *self {
            Self::CoulombViscous { coulomb, viscous, .. } => coulomb * sgn(thetadot) + viscous * thetadot,
            Self::Stribeck { ref params, scale, .. } => scale * stribeck_friction(thetadot, params),
            Self::ImpulseTrain { magnitude, width, period, start, .. } => {
                if k >= start && (k - start) % period < width {
                    magnitude
                } else {
                    0.0
                }
            }
            Self::ElasticPeriodic { amplitude, frequency, phase, cap, .. } => {
                let t = k as f64 * dt;
                (amplitude * (std::f64::consts::TAU * frequency * t + phase).sin()).clamp(-cap, cap)
            }
            Self::Constant { value, .. } => value,
        }
    }
}

/// Draws the disturbance at step `k`. Exactly one normal draw is consumed
/// per call, even when the noise is disabled, so switching noise on or off
/// leaves the rest of the random stream aligned.
pub fn gen_disturbance<R: Rng + ?Sized>(
    profile: &DisturbanceProfile,
    thetadot: f64,
    k: usize,
    dt: f64,
    rng: &mut R,
) -> f64 {
    let w: f64 = StandardNormal.sample(rng);
    profile.signal(thetadot, k, dt) + profile.noise_std() * w
}

/// Sum of several profiles acting on the same joint; each draws its own noise.
pub fn gen_joint_disturbance<R: Rng + ?Sized>(
    profiles: &[DisturbanceProfile],
    thetadot: f64,
    k: usize,
    dt: f64,
    rng: &mut R,
) -> f64 {
    profiles.iter().map(|p| gen_disturbance(p, thetadot, k, dt, rng)).sum()
}
