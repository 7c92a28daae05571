use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ekf::{check_noise_dims, predict};
use super::state::{symmetrize, AugmentedState, NoiseConfig};
use crate::dynamics::PlantModel;
use crate::error::{DobError, Result};

/// Smallest kernel value used when inverting the weight matrix; caps the
/// covariance inflation of a single channel at 1e10.
pub const MIN_KERNEL_WEIGHT: f64 = 1e-10;

/// Gaussian kernel bandwidth of one residual channel.
///
/// `Infinite` is the exact least-squares limit: the channel weight is 1
/// whatever the residual.
///
/// Serialized as a bare number or the string `"infinite"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandwidthRepr", into = "BandwidthRepr")]
pub enum Bandwidth {
    Finite(f64),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthRepr {
    Number(f64),
    Word(String),
}

impl TryFrom<BandwidthRepr> for Bandwidth {
    type Error = String;

    fn try_from(r: BandwidthRepr) -> std::result::Result<Self, String> {
        match r {
            BandwidthRepr::Number(v) => Ok(Bandwidth::Finite(v)),
            BandwidthRepr::Word(w) if w == "infinite" => Ok(Bandwidth::Infinite),
            BandwidthRepr::Word(w) => Err(format!("bandwidth must be a number or \"infinite\", got {w:?}")),
        }
    }
}

impl From<Bandwidth> for BandwidthRepr {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Finite(v) => BandwidthRepr::Number(v),
            Bandwidth::Infinite => BandwidthRepr::Word("infinite".into()),
        }
    }
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bandwidth::Finite(v) => write!(f, "{v:.4}"),
            Bandwidth::Infinite => f.write_str("inf"),
        }
    }
}

impl Bandwidth {
    pub fn kernel(self, e: f64) -> f64 {
        match self {
            Bandwidth::Finite(sigma) => (-(e * e) / (2.0 * sigma * sigma)).exp(),
            Bandwidth::Infinite => 1.0,
        }
    }

    pub fn is_valid(self) -> bool {
        match self {
            Bandwidth::Finite(s) => s > 0.0 && s.is_finite(),
            Bandwidth::Infinite => true,
        }
    }
}

/// Kernel bandwidths and fixed-point settings of the MKC-EKF observer.
#[derive(Debug, Clone, PartialEq)]
pub struct MkcConfig {
    pub sigma_d: Vec<Bandwidth>,
    pub sigma_s: Vec<Bandwidth>,
    pub sigma_r: Vec<Bandwidth>,
    /// Relative-change threshold of the fixed-point loop.
    pub eps_fp: f64,
    pub max_iter: usize,
}

impl MkcConfig {
    /// Finite disturbance bandwidths, quadratic state and measurement channels.
    pub fn disturbance_only(sigma_d: &[f64], state_dim: usize, measurement_dim: usize) -> Self {
        let p = sigma_d.len();
        Self {
            sigma_d: sigma_d.iter().map(|&s| Bandwidth::Finite(s)).collect(),
            sigma_s: vec![Bandwidth::Infinite; state_dim - p],
            sigma_r: vec![Bandwidth::Infinite; measurement_dim],
            eps_fp: 1e-6,
            max_iter: 20,
        }
    }

    /// Every channel quadratic; the observer reduces to the EKF.
    pub fn all_infinite(disturbance_dim: usize, state_dim: usize, measurement_dim: usize) -> Self {
        Self {
            sigma_d: vec![Bandwidth::Infinite; disturbance_dim],
            sigma_s: vec![Bandwidth::Infinite; state_dim - disturbance_dim],
            sigma_r: vec![Bandwidth::Infinite; measurement_dim],
            eps_fp: 1e-6,
            max_iter: 20,
        }
    }

    pub fn process_bandwidths(&self) -> Vec<Bandwidth> {
        self.sigma_d.iter().chain(&self.sigma_s).copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.sigma_d.iter().chain(&self.sigma_s).chain(&self.sigma_r);
        if all.clone().any(|b| !b.is_valid()) {
            return Err(DobError::Config("kernel bandwidths must be positive".into()));
        }
        if !(self.eps_fp > 0.0) || self.max_iter == 0 {
            return Err(DobError::Config("need eps_fp > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Whitened residuals and the Cholesky factors used to produce them.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub e_p: DVector<f64>,
    pub e_r: DVector<f64>,
    pub b_p: DMatrix<f64>,
    pub b_r: DMatrix<f64>,
}

/// `e_p = B_p⁻¹ (x̂⁻ − x̂_t)`, `e_r = B_r⁻¹ (y − H x̂_t)` with `B_p B_pᵀ = P⁻`
/// and `B_r B_rᵀ = R` (lower-triangular factors).
pub fn whiten_residuals(
    x_pred: &DVector<f64>,
    p_pred: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x_iter: &DVector<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
) -> Result<Whitened> {
    let b_p = lower_cholesky(p_pred, "predicted covariance")?;
    let b_r = lower_cholesky(r, "measurement covariance")?;
    let e_p = solve_lower(&b_p, &(x_pred - x_iter))?;
    let e_r = solve_lower(&b_r, &(y - h * x_iter))?;
    Ok(Whitened { e_p, e_r, b_p, b_r })
}

/// `diag(G_σ(e_i))`; infinite bandwidths give exactly 1.
pub fn mkc_weight_matrix(e: &DVector<f64>, sigma: &[Bandwidth]) -> Result<DMatrix<f64>> {
    if e.len() != sigma.len() {
        return Err(DobError::Dimension(format!(
            "{} residuals but {} bandwidths",
            e.len(),
            sigma.len()
        )));
    }
    let w = DVector::from_iterator(e.len(), e.iter().zip(sigma).map(|(&ei, b)| b.kernel(ei)));
    Ok(DMatrix::from_diagonal(&w))
}

/// `B M⁻¹ Bᵀ`, with kernel weights floored at [`MIN_KERNEL_WEIGHT`].
pub fn inflated_covariance(b: &DMatrix<f64>, weights: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = b.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= weights[(j, j)].max(MIN_KERNEL_WEIGHT).sqrt();
    }
    &scaled * scaled.transpose()
}

/// Result of one MKC-EKF cycle.
#[derive(Debug, Clone)]
pub struct MkcStep {
    pub state: AugmentedState,
    /// Number of fixed-point iterations performed (≥ 1).
    pub iterations: usize,
    /// `max_iter` was hit while the relative change was still above `100 ε`.
    pub diverged: bool,
}

/// One MKC-EKF cycle: EKF prediction, fixed-point reweighting of the
/// predicted covariance, and a Joseph-form covariance update. With every
/// bandwidth infinite the step reduces to the EKF update exactly.
pub fn mkcekf_dob_step(
    s: &AugmentedState,
    model: &dyn PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    nc: &NoiseConfig,
    mk: &MkcConfig,
) -> Result<MkcStep> {
    check_noise_dims(model, nc)?;
    mk.validate()?;
    let n = model.state_dim();
    let h = model.observation_matrix();
    if mk.sigma_d.len() != model.disturbance_dim()
        || mk.sigma_d.len() + mk.sigma_s.len() != n
        || mk.sigma_r.len() != h.nrows()
    {
        return Err(DobError::Dimension("kernel bandwidths do not match the plant".into()));
    }
    if y.len() != h.nrows() {
        return Err(DobError::Dimension(format!(
            "measurement has {} entries, expected {}",
            y.len(),
            h.nrows()
        )));
    }
    let sigma_p = mk.process_bandwidths();

    let pred = predict(s, model, u, &nc.process_covariance())?;
    let b_p = lower_cholesky(&pred.p, "predicted covariance")?;
    let b_r = lower_cholesky(&nc.r, "measurement covariance")?;
    let innovation = y - &h * &pred.x;

    let ht = h.transpose();
    let r_infinite = mk.sigma_r.iter().all(|b| *b == Bandwidth::Infinite);
    let mut x_prev = pred.x.clone();
    let mut p_tilde = pred.p.clone();
    let mut gain: DMatrix<f64>;
    let mut iterations = 0;
    let mut rel_change;
    loop {
        iterations += 1;
        let e_p = solve_lower(&b_p, &(&pred.x - &x_prev))?;
        // B M⁻¹ Bᵀ = P⁻ + Σ_j (1/w_j − 1) b_j b_jᵀ, so only down-weighted columns cost anything
        p_tilde.copy_from(&pred.p);
        for (j, (&e, bw)) in e_p.iter().zip(&sigma_p).enumerate() {
            let w = bw.kernel(e);
            if w < 1.0 {
                let scale = 1.0 / w.max(MIN_KERNEL_WEIGHT) - 1.0;
                let col = b_p.column(j);
                p_tilde.ger(scale, &col, &col, 1.0);
            }
        }
        let r_tilde = if r_infinite {
            nc.r.clone()
        } else {
            let e_r = solve_lower(&b_r, &(y - &h * &x_prev))?;
            inflated_covariance(&b_r, &mkc_weight_matrix(&e_r, &mk.sigma_r)?)
        };
        let pht = &p_tilde * &ht;
        let s_inv = (&h * &pht + r_tilde)
            .cholesky()
            .ok_or(DobError::InnovationSingular)?
            .inverse();
        gain = pht * s_inv;
        let x_t = &pred.x + &gain * &innovation;
        let norm = x_t.norm();
        let diff = (&x_t - &x_prev).norm();
        rel_change = if norm > 0.0 { diff / norm } else { diff };
        x_prev = x_t;
        if !(rel_change > mk.eps_fp) || iterations >= mk.max_iter {
            break;
        }
    }
    if x_prev.iter().any(|v| !v.is_finite()) {
        return Err(DobError::NonFinite { context: "fixed-point update" });
    }

    let i_kh = DMatrix::identity(n, n) - &gain * &h;
    // with every channel quadratic the gain is the Kalman gain and the short form is exact
    let least_squares = r_infinite && sigma_p.iter().all(|b| *b == Bandwidth::Infinite);
    let mut p = if least_squares {
        &i_kh * &pred.p
    } else {
        &i_kh * &pred.p * i_kh.transpose() + &gain * &nc.r * gain.transpose()
    };
    symmetrize(&mut p);
    Ok(MkcStep {
        state: AugmentedState { x: x_prev, p, k: s.k + 1 },
        iterations,
        diverged: iterations >= mk.max_iter && rel_change > 100.0 * mk.eps_fp,
    })
}

fn lower_cholesky(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.unpack())
        .ok_or(DobError::NotPd { context })
}

fn solve_lower(l: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    l.solve_lower_triangular(v)
        .ok_or(DobError::NotPd { context: "triangular factor" })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{OneDofParams, OneDofPlant};
    use crate::observers::ekf::ekf_dob_step;
    use crate::observers::state::min_eigenvalue;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn plant() -> OneDofPlant {
        OneDofPlant::new(OneDofParams::default(), 0.01).unwrap()
    }

    #[test]
    fn zero_residual_whitening() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5]));
        let h = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let y = &h * &x;
        let w = whiten_residuals(&x, &p, &DMatrix::identity(1, 1), &x, &y, &h).unwrap();
        assert_eq!(w.e_p, DVector::zeros(3));
        assert_eq!(w.e_r, DVector::zeros(1));
    }

    #[test]
    fn identity_whitening_returns_raw_differences() {
        let x_pred = DVector::from_vec(vec![1.0, -2.0]);
        let x_iter = DVector::from_vec(vec![0.5, 1.0]);
        let h = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![3.0, 3.0]);
        let i2 = DMatrix::identity(2, 2);
        let w = whiten_residuals(&x_pred, &i2, &i2, &x_iter, &y, &h).unwrap();
        assert_eq!(w.e_p, &x_pred - &x_iter);
        assert_eq!(w.e_r, &y - &x_iter);
    }

    #[test]
    fn scalar_whitening_divides_by_std() {
        let w = whiten_residuals(
            &DVector::from_element(1, 2.0),
            &DMatrix::from_element(1, 1, 4.0),
            &DMatrix::identity(1, 1),
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        assert_eq!(w.e_p[0], 1.0);
    }

    #[test]
    fn indefinite_covariance_fails_whitening() {
        let err = whiten_residuals(
            &DVector::zeros(1),
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::identity(1, 1),
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
        )
        .unwrap_err();
        assert!(matches!(err, DobError::NotPd { .. }));
    }

    #[test]
    fn bandwidth_serializes_as_number_or_word() {
        let v = vec![Bandwidth::Finite(1.5), Bandwidth::Infinite];
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"[1.5,"infinite"]"#);
        assert_eq!(serde_json::from_str::<Vec<Bandwidth>>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Bandwidth>(r#""huge""#).is_err());
    }

    #[test]
    fn kernel_weights() {
        let sigma = [Bandwidth::Finite(1.5), Bandwidth::Finite(2.0), Bandwidth::Infinite];
        let m = mkc_weight_matrix(&DVector::zeros(3), &sigma).unwrap();
        assert_eq!(m, DMatrix::identity(3, 3));
        let m = mkc_weight_matrix(&DVector::from_vec(vec![1.5, 2.0, 1e6]), &sigma).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 0.606_530_659_712_633_4, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 0.606_530_659_712_633_4, epsilon = 1e-15);
        assert_eq!(m[(2, 2)], 1.0);
    }

    #[test]
    fn zero_innovation_converges_in_one_iteration() {
        let nc = NoiseConfig::from_diag(&[0.25], &[1e-6, 1e-6], &[1e-6], 1.0).unwrap();
        let mk = MkcConfig::disturbance_only(&[1.5], 3, 1);
        let s = AugmentedState::from_diag(&[2.0, 1.0, 0.3], &[1.0, 0.01, 1e-4]).unwrap();
        let u = DVector::from_element(1, 0.5);
        let x_pred = plant().transition(&s.x, &u).unwrap();
        let y = DVector::from_element(1, x_pred[2]);
        let out = mkcekf_dob_step(&s, &plant(), &u, &y, &nc, &mk).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.state.x, x_pred);
        assert!(!out.diverged);
    }

    #[test]
    fn infinite_bandwidths_reproduce_ekf() {
        let nc = NoiseConfig::from_diag(&[0.25], &[1e-6, 1e-6], &[1e-6], 1.0).unwrap();
        let mk = MkcConfig::all_infinite(1, 3, 1);
        let mut a = AugmentedState::from_diag(&[0.0, 0.0, 0.0], &[10.0, 0.01, 1e-4]).unwrap();
        let mut b = a.clone();
        for k in 0..200 {
            let u = DVector::from_element(1, (0.05 * k as f64).cos());
            let y = DVector::from_element(1, 0.3 * (0.02 * k as f64).sin());
            a = ekf_dob_step(&a, &plant(), &u, &y, &nc).unwrap();
            b = mkcekf_dob_step(&b, &plant(), &u, &y, &nc, &mk).unwrap().state;
            assert!((&a.x - &b.x).amax() < 1e-9);
            assert!((&a.p - &b.p).amax() < 1e-9);
        }
    }

    #[test]
    fn finite_bandwidth_inflates_gain_for_large_residuals() {
        let nc = NoiseConfig::from_diag(&[0.25], &[1e-6, 1e-6], &[1e-6], 1.0).unwrap();
        let u = DVector::zeros(1);
        let mut s = AugmentedState::from_diag(&[0.0, 0.0, 0.0], &[0.25, 1e-4, 1e-6]).unwrap();
        for _ in 0..20 {
            s = ekf_dob_step(&s, &plant(), &u, &DVector::zeros(1), &nc).unwrap();
        }
        // a jump in the measured angle that the nominal covariance cannot explain
        let y = DVector::from_element(1, 0.05);
        let ekf = ekf_dob_step(&s, &plant(), &u, &y, &nc).unwrap();
        let mk = MkcConfig::disturbance_only(&[1.5], 3, 1);
        let out = mkcekf_dob_step(&s, &plant(), &u, &y, &nc, &mk).unwrap();
        assert!(out.iterations >= 2);
        assert!(ekf.x[0] > 0.0);
        assert!(out.state.x[0] > ekf.x[0]);
    }

    proptest! {
        #[test]
        fn inflation_never_shrinks_covariance(
            diag in prop::collection::vec(0.01f64..10.0, 3),
            off in prop::collection::vec(-0.5f64..0.5, 3),
            e in prop::collection::vec(-20.0f64..20.0, 3),
            sig in prop::collection::vec(0.1f64..5.0, 3),
        ) {
            let mut l = DMatrix::from_diagonal(&DVector::from_vec(diag));
            l[(1, 0)] = off[0];
            l[(2, 0)] = off[1];
            l[(2, 1)] = off[2];
            let p = &l * l.transpose();
            let b = lower_cholesky(&p, "test").unwrap();
            let sigma: Vec<_> = sig.into_iter().map(Bandwidth::Finite).collect();
            let m = mkc_weight_matrix(&DVector::from_vec(e), &sigma).unwrap();
            let diff = inflated_covariance(&b, &m) - &p;
            prop_assert!(min_eigenvalue(&diff) >= -1e-9 * diff.amax().max(1.0));
        }
    }
}
