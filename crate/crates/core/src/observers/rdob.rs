use crate::dynamics::{two_link_terms, JointVec, TwoLinkParams};
use crate::error::{DobError, Result};

/// Raw inverse-dynamics disturbance `d = M θ̈ + C θ̇ + G − τ`.
///
/// Unbiased but as noisy as the acceleration fed in.
pub fn raw_dob(
    theta: &JointVec,
    thetadot: &JointVec,
    thetaddot: &JointVec,
    tau: &JointVec,
    p: &TwoLinkParams,
) -> JointVec {
    let t = two_link_terms(theta, thetadot, p);
    t.mass * thetaddot + t.coriolis * thetadot + t.gravity - tau
}

/// Raw disturbance along a recorded run. Accelerations come from the central
/// difference of the measured rates; the first and last samples use `θ̈ = 0`.
pub fn raw_dob_series(
    theta: &[JointVec],
    thetadot: &[JointVec],
    tau: &[JointVec],
    dt: f64,
    p: &TwoLinkParams,
) -> Result<Vec<JointVec>> {
    let n = theta.len();
    if thetadot.len() != n || tau.len() != n {
        return Err(DobError::Dimension("series lengths differ".into()));
    }
    Ok((0..n)
        .map(|k| {
            let acc = if k == 0 || k + 1 == n {
                JointVec::zeros()
            } else {
                (thetadot[k + 1] - thetadot[k - 1]) / (2.0 * dt)
            };
            raw_dob(&theta[k], &thetadot[k], &acc, &tau[k], p)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::forward_dynamics;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inverts_forward_dynamics() {
        let p = TwoLinkParams::exo_left_leg();
        let theta = JointVec::new(-0.3, 0.9);
        let thetadot = JointVec::new(2.0, -1.5);
        let tau = JointVec::new(12.0, -4.0);
        let d = JointVec::new(-3.5, 7.25);
        let acc = forward_dynamics(&theta, &thetadot, &tau, &d, &p).unwrap();
        assert_abs_diff_eq!(raw_dob(&theta, &thetadot, &acc, &tau, &p), d, epsilon = 1e-9);
    }

    #[test]
    fn at_rest_returns_gravity_minus_torque() {
        let p = TwoLinkParams::exo_left_leg();
        let theta = JointVec::new(0.4, 0.1);
        let tau = JointVec::new(1.0, 2.0);
        let d = raw_dob(&theta, &JointVec::zeros(), &JointVec::zeros(), &tau, &p);
        assert_eq!(d, p.gravity(&theta) - tau);
        let held = raw_dob(&theta, &JointVec::zeros(), &JointVec::zeros(), &p.gravity(&theta), &p);
        assert_eq!(held, JointVec::zeros());
    }

    #[test]
    fn series_pads_boundaries() {
        let p = TwoLinkParams::exo_left_leg();
        let theta = vec![JointVec::zeros(); 3];
        let rates = vec![JointVec::zeros(), JointVec::new(1.0, 0.0), JointVec::new(2.0, 0.0)];
        let tau = vec![JointVec::zeros(); 3];
        let out = raw_dob_series(&theta, &rates, &tau, 0.5, &p).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], raw_dob(&theta[0], &rates[0], &JointVec::zeros(), &tau[0], &p));
        let mid_acc = JointVec::new(2.0, 0.0);
        assert_eq!(out[1], raw_dob(&theta[1], &rates[1], &mid_acc, &tau[1], &p));
    }
}
