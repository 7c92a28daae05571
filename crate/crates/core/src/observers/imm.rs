use nalgebra::{DMatrix, DVector};

use super::ekf::{check_noise_dims, predict, update};
use super::state::{symmetrize, AugmentedState, NoiseConfig};
use crate::dynamics::PlantModel;
use crate::error::{DobError, Result};

/// Bank of disturbance covariances switched by a Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmConfig {
    pub bank: Vec<NoiseConfig>,
    /// `markov[(i, j)]` is the probability of switching from model `i` to `j`.
    pub markov: DMatrix<f64>,
    pub mu0: DVector<f64>,
}

impl ImmConfig {
    /// Uniform initial probabilities.
    pub fn new(bank: Vec<NoiseConfig>, markov: DMatrix<f64>) -> Result<Self> {
        let n = bank.len();
        let cfg = Self {
            bank,
            markov,
            mu0: DVector::from_element(n, 1.0 / n.max(1) as f64),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.bank.len();
        if n == 0 {
            return Err(DobError::Config("IMM bank is empty".into()));
        }
        if self.markov.nrows() != n || self.markov.ncols() != n || self.mu0.len() != n {
            return Err(DobError::Dimension(format!(
                "IMM bank has {n} models but the Markov matrix is {}x{} and mu0 has {} entries",
                self.markov.nrows(),
                self.markov.ncols(),
                self.mu0.len()
            )));
        }
        for row in self.markov.row_iter() {
            if row.iter().any(|&v| !(v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(DobError::Config("Markov rows must be non-negative and sum to 1".into()));
            }
        }
        if self.mu0.iter().any(|&v| !(v >= 0.0)) || (self.mu0.sum() - 1.0).abs() > 1e-9 {
            return Err(DobError::Config("mu0 must lie on the probability simplex".into()));
        }
        for nc in &self.bank {
            nc.validate()?;
        }
        Ok(())
    }
}

/// Result of one IMM cycle.
#[derive(Debug, Clone)]
pub struct ImmStep {
    pub states: Vec<AugmentedState>,
    pub mu: DVector<f64>,
    pub fused: AugmentedState,
    /// Every model likelihood underflowed; `mu` was carried over unchanged.
    pub degenerate: bool,
}

/// One IMM-EKF cycle: mixing, per-model filtering, probability update and
/// fused output.
pub fn immekf_dob_step(
    bank_states: &[AugmentedState],
    mu: &DVector<f64>,
    model: &dyn PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &ImmConfig,
) -> Result<ImmStep> {
    let r = cfg.bank.len();
    if bank_states.len() != r || mu.len() != r {
        return Err(DobError::Dimension(format!(
            "IMM bank has {r} models, got {} states and {} probabilities",
            bank_states.len(),
            mu.len()
        )));
    }
    for nc in &cfg.bank {
        check_noise_dims(model, nc)?;
    }
    let n = model.state_dim();
    let h = model.observation_matrix();

    // mixing
    let c_bar: Vec<f64> = (0..r)
        .map(|j| (0..r).map(|i| cfg.markov[(i, j)] * mu[i]).sum())
        .collect();
    let mut filtered = Vec::with_capacity(r);
    let mut log_lik = Vec::with_capacity(r);
    for j in 0..r {
        let weights: Vec<f64> = if c_bar[j] > 0.0 {
            (0..r).map(|i| cfg.markov[(i, j)] * mu[i] / c_bar[j]).collect()
        } else {
            mu.iter().copied().collect()
        };
        let mut x_init = DVector::zeros(n);
        for (i, s) in bank_states.iter().enumerate() {
            x_init += &s.x * weights[i];
        }
        let mut p_init = DMatrix::zeros(n, n);
        for (i, s) in bank_states.iter().enumerate() {
            let dx = &s.x - &x_init;
            p_init += (&s.p + &dx * dx.transpose()) * weights[i];
        }
        let mixed = AugmentedState { x: x_init, p: p_init, k: bank_states[j].k };

        let pred = predict(&mixed, model, u, &cfg.bank[j].process_covariance())?;
        let upd = update(&pred, &h, y, &cfg.bank[j].r, mixed.k + 1)?;
        log_lik.push(gaussian_log_likelihood(&upd.innovation, &upd.innovation_cov)?);
        filtered.push(upd.state);
    }

    // model probabilities, computed in log space
    let log_post: Vec<f64> = log_lik
        .iter()
        .zip(&c_bar)
        .map(|(l, c)| l + c.ln())
        .collect();
    let peak = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (new_mu, degenerate) = if peak.is_finite() {
        let w: Vec<f64> = log_post.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = w.iter().sum();
        (DVector::from_iterator(r, w.iter().map(|v| v / total)), false)
    } else {
        (mu.clone(), true)
    };

    // fused output
    let mut x = DVector::zeros(n);
    for (j, s) in filtered.iter().enumerate() {
        x += &s.x * new_mu[j];
    }
    let mut p = DMatrix::zeros(n, n);
    for (j, s) in filtered.iter().enumerate() {
        let dx = &s.x - &x;
        p += (&s.p + &dx * dx.transpose()) * new_mu[j];
    }
    symmetrize(&mut p);
    let k = filtered[0].k;
    Ok(ImmStep {
        states: filtered,
        mu: new_mu,
        fused: AugmentedState { x, p, k },
        degenerate,
    })
}

/// `log N(e; 0, S) = −½ (m log 2π + log|S| + eᵀ S⁻¹ e)`.
pub fn gaussian_log_likelihood(e: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let chol = s.clone().cholesky().ok_or(DobError::InnovationSingular)?;
    let m = e.len() as f64;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let maha = e.dot(&chol.solve(e));
    Ok(-0.5 * (m * (2.0 * std::f64::consts::PI).ln() + log_det + maha))
}
