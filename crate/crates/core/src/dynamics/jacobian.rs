use nalgebra::{DMatrix, DVector};

use crate::error::{DobError, Result};

/// Default relative probe size: `h_j = REL_STEP · max(1, |x_j|)`.
pub const REL_STEP: f64 = 1e-6;

/// Central-difference Jacobian of `f` at `x`.
///
/// Column `j` is `(f(x + h_j e_j) − f(x − h_j e_j)) / (2 h_j)` with
/// `h_j = rel_step · max(1, |x_j|)`.
pub fn numerical_jacobian<F>(f: F, x: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(rel_step > 0.0) {
        return Err(DobError::Config("jacobian step must be positive".into()));
    }
    let n = x.len();
    let mut probe = x.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = f(&probe)?;
        probe[j] = x[j] - h;
        let minus = f(&probe)?;
        probe[j] = x[j];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(DobError::NonFinite { context: "jacobian probe" });
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), n));
        let mut col = jac.column_mut(j);
        col.copy_from(&((plus - minus) / (2.0 * h)));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{one_dof_transition, OneDofParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_map_is_recovered() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0, -1.0, 2.5, 7.0]);
        let x = DVector::from_vec(vec![0.3, -20.0, 5.0]);
        let jac = numerical_jacobian(|v| Ok(&a * v), &x, REL_STEP).unwrap();
        assert_abs_diff_eq!(jac, a, epsilon = 1e-8);
    }

    #[test]
    fn non_finite_probe_is_reported() {
        let x = DVector::from_vec(vec![0.0]);
        // the minus probe lands exactly on the log singularity
        let err = numerical_jacobian(|v| Ok(v.map(|e| (e + 1e-6).ln())), &x, 1e-6).unwrap_err();
        assert!(matches!(err, DobError::NonFinite { .. }));
    }

    fn one_dof_map(v: &DVector<f64>) -> Result<DVector<f64>> {
        let p = OneDofParams::default();
        let next = one_dof_transition(&[v[0], v[1], v[2]], 0.7, 0.01, &p);
        Ok(DVector::from_column_slice(&next))
    }

    fn one_dof_analytic(x: &DVector<f64>) -> DMatrix<f64> {
        let p = OneDofParams::default();
        let dt = 0.01;
        let r = dt / p.inertia;
        DMatrix::from_row_slice(3, 3, &[
            1.0, 0.0, 0.0,
            r, (p.inertia - p.damping * dt) / p.inertia, -r * (p.stiffness + p.mass * p.gravity * x[2].cos()),
            0.0, dt, 1.0,
        ])
    }

    #[test]
    fn one_dof_jacobian_matches_analytic() {
        for theta in [-2.0, -0.3, 0.0, 0.9, 2.5] {
            let x = DVector::from_vec(vec![1.5, -0.4, theta]);
            let jac = numerical_jacobian(one_dof_map, &x, REL_STEP).unwrap();
            assert_abs_diff_eq!(jac, one_dof_analytic(&x), epsilon = 1e-6);
        }
    }

    #[test]
    fn halving_the_step_quarters_the_error() {
        let x = DVector::from_vec(vec![0.0, 0.2, 0.8]);
        let exact = one_dof_analytic(&x);
        let err = |h: f64| (numerical_jacobian(one_dof_map, &x, h).unwrap() - &exact).amax();
        let ratio = err(2e-2) / err(1e-2);
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }
}
