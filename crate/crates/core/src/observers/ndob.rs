use nalgebra::Matrix2;

use crate::dynamics::{checked_inverse, two_link_terms, JointVec, TwoLinkParams};
use crate::error::{DobError, Result};

/// Default observer gain; larger values speed up convergence and pass more noise.
pub const DEFAULT_NDOB_GAIN: f64 = 50.0;

/// Auxiliary state of the nonlinear disturbance observer for the two-link leg.
///
/// With `p(θ̇) = c [θ̇1, θ̇1 + θ̇2]ᵀ` and `L = c [[1,0],[1,1]] M(θ)⁻¹` the
/// estimation error obeys `ė = −L e`. Explicit Euler stays stable while
/// `c Δt ‖M⁻¹‖ < 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdobState {
    pub z: JointVec,
    pub c: f64,
}

impl NdobState {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(DobError::Config(format!("NDOB gain must be positive, got {c}")));
        }
        Ok(Self { z: JointVec::zeros(), c })
    }

    /// Seeds `z` so the first output equals `d0` at the given rates.
    pub fn with_estimate(c: f64, d0: &JointVec, thetadot: &JointVec) -> Result<Self> {
        let mut s = Self::new(c)?;
        s.z = d0 - ndob_p(c, thetadot);
        Ok(s)
    }
}

fn ndob_p(c: f64, thetadot: &JointVec) -> JointVec {
    JointVec::new(c * thetadot[0], c * (thetadot[0] + thetadot[1]))
}

/// Current estimate `d̂ = z + p(θ̇)`.
pub fn ndob_estimate(nd: &NdobState, thetadot: &JointVec) -> JointVec {
    nd.z + ndob_p(nd.c, thetadot)
}

/// Observer gain `L(θ) = c [[1,0],[1,1]] M(θ)⁻¹`.
pub fn ndob_gain(c: f64, theta: &JointVec, p: &TwoLinkParams) -> Result<Matrix2<f64>> {
    let m_inv = checked_inverse(&p.mass_matrix(theta))?;
    Ok(Matrix2::new(c, 0.0, c, c) * m_inv)
}

/// Euler step of the NDOB. Returns the advanced state and the estimate
/// `d̂_k = z_k + p(θ̇_k)` taken before the update.
pub fn ndob_step(
    nd: &NdobState,
    theta: &JointVec,
    thetadot: &JointVec,
    tau: &JointVec,
    p: &TwoLinkParams,
    dt: f64,
) -> Result<(NdobState, JointVec)> {
    if !(dt > 0.0) {
        return Err(DobError::Config("dt must be positive".into()));
    }
    let t = two_link_terms(theta, thetadot, p);
    let l = ndob_gain(nd.c, theta, p)?;
    let pv = ndob_p(nd.c, thetadot);
    let d_hat = nd.z + pv;
    let drive = t.coriolis * thetadot + t.gravity - tau - pv;
    let z = (Matrix2::identity() - l * dt) * nd.z + l * dt * drive;
    Ok((NdobState { z, c: nd.c }, d_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_estimate_is_a_fixed_point() {
        let p = TwoLinkParams::exo_left_leg();
        let theta = JointVec::new(0.2, -0.4);
        let d = JointVec::new(3.0, -1.0);
        let tau = p.gravity(&theta) - d;
        let nd = NdobState::with_estimate(50.0, &d, &JointVec::zeros()).unwrap();
        let (next, d_hat) = ndob_step(&nd, &theta, &JointVec::zeros(), &tau, &p, 1e-3).unwrap();
        assert_abs_diff_eq!(d_hat, d, epsilon = 1e-12);
        let (_, d_hat_next) = ndob_step(&next, &theta, &JointVec::zeros(), &tau, &p, 1e-3).unwrap();
        assert_abs_diff_eq!(d_hat_next, d, epsilon = 1e-9);
    }

    #[test]
    fn error_norm_decays_for_constant_disturbance() {
        let p = TwoLinkParams::exo_left_leg();
        let theta = JointVec::new(0.1, -0.3);
        let d = JointVec::new(5.0, 2.0);
        let tau = p.gravity(&theta) - d;
        let mut nd = NdobState::new(50.0).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let (next, d_hat) = ndob_step(&nd, &theta, &JointVec::zeros(), &tau, &p, 1e-3).unwrap();
            let err = (d - d_hat).norm();
            assert!(err <= last + 1e-12);
            last = err;
            nd = next;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn nonpositive_gain_is_rejected() {
        assert!(NdobState::new(0.0).is_err());
    }

    #[test]
    fn step_rise_time_follows_slow_eigenvalue() {
        let p = TwoLinkParams::exo_left_leg();
        let (c, dt) = (50.0, 1e-3);
        let theta = JointVec::new(0.1, -0.3);
        let d = JointVec::new(5.0, 0.0);
        let tau = p.gravity(&theta) - d;
        let l = ndob_gain(c, &theta, &p).unwrap();
        let (tr, det) = (l.trace(), l.determinant());
        let slow = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
        let predicted = 20f64.ln() / slow;

        let mut nd = NdobState::new(c).unwrap();
        let mut rise = None;
        for k in 0..1000 {
            let (next, d_hat) = ndob_step(&nd, &theta, &JointVec::zeros(), &tau, &p, dt).unwrap();
            if rise.is_none() && d_hat[0] >= 0.95 * d[0] {
                rise = Some(k as f64 * dt);
            }
            nd = next;
        }
        let rise = rise.expect("estimate never reached 95%");
        assert!((rise / predicted - 1.0).abs() < 0.2, "rise {rise} predicted {predicted}");
    }
}
