use nalgebra::{DMatrix, DVector};

use crate::error::{DobError, Result};

/// Augmented estimate `x̂ = [d̂, ŝ]` with covariance `P` at time index `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub k: usize,
}

impl AugmentedState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        let s = Self { x, p, k: 0 };
        s.validate()?;
        Ok(s)
    }

    pub fn from_diag(x: &[f64], p_diag: &[f64]) -> Result<Self> {
        if x.len() != p_diag.len() {
            return Err(DobError::Dimension(format!(
                "state has {} entries but covariance diagonal has {}",
                x.len(),
                p_diag.len()
            )));
        }
        Self::new(
            DVector::from_column_slice(x),
            DMatrix::from_diagonal(&DVector::from_column_slice(p_diag)),
        )
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Disturbance block of the estimate (first `p` entries).
    pub fn disturbance(&self, p: usize) -> &[f64] {
        &self.x.as_slice()[..p]
    }

    /// Checks dimensions, symmetry and positive semi-definiteness (to -1e-10).
    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(DobError::Dimension(format!(
                "covariance is {}x{} for a state of length {n}",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        if self.x.iter().chain(self.p.iter()).any(|v| !v.is_finite()) {
            return Err(DobError::NonFinite { context: "augmented state" });
        }
        let scale = self.p.amax().max(1.0);
        if (&self.p - self.p.transpose()).amax() > 1e-9 * scale {
            return Err(DobError::NotPd { context: "covariance is not symmetric" });
        }
        if min_eigenvalue(&self.p) < -1e-10 * scale {
            return Err(DobError::NotPd { context: "covariance has a negative eigenvalue" });
        }
        Ok(())
    }
}

/// Process and measurement noise of a disturbance observer.
///
/// The process covariance is block diagonal, `Q = diag(η Q_d, Q_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub q_d: DMatrix<f64>,
    pub q_s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Multiplier on the disturbance block, `η ≥ 1`.
    pub eta: f64,
}

impl NoiseConfig {
    pub fn from_diag(q_d: &[f64], q_s: &[f64], r: &[f64], eta: f64) -> Result<Self> {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let nc = Self { q_d: diag(q_d), q_s: diag(q_s), r: diag(r), eta };
        nc.validate()?;
        Ok(nc)
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        Self { eta, ..self.clone() }
    }

    pub fn state_dim(&self) -> usize {
        self.q_d.nrows() + self.q_s.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 1.0) || !self.eta.is_finite() {
            return Err(DobError::Config(format!("eta must be finite and >= 1, got {}", self.eta)));
        }
        for (name, m) in [("Q_d", &self.q_d), ("Q_s", &self.q_s), ("R", &self.r)] {
            if !m.is_square() {
                return Err(DobError::Dimension(format!("{name} must be square")));
            }
            if m.iter().any(|v| !v.is_finite()) || (m - m.transpose()).amax() > 0.0 {
                return Err(DobError::Config(format!("{name} must be finite and symmetric")));
            }
            if m.nrows() > 0 && min_eigenvalue(m) < 0.0 {
                return Err(DobError::Config(format!("{name} must be positive semi-definite")));
            }
        }
        if self.r.nrows() == 0 || self.r.clone().cholesky().is_none() {
            return Err(DobError::Config("R must be positive definite".into()));
        }
        Ok(())
    }

    pub fn process_covariance(&self) -> DMatrix<f64> {
        let p = self.q_d.nrows();
        let n = p + self.q_s.nrows();
        let mut q = DMatrix::zeros(n, n);
        q.view_mut((0, 0), (p, p)).copy_from(&(&self.q_d * self.eta));
        q.view_mut((p, p), (n - p, n - p)).copy_from(&self.q_s);
        q
    }
}

/// `P ← (P + Pᵀ)/2`.
pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigenvalues().min()
}
