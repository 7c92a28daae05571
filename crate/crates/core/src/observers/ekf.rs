use nalgebra::{DMatrix, DVector};

use super::state::{symmetrize, AugmentedState, NoiseConfig};
use crate::dynamics::PlantModel;
use crate::error::{DobError, Result};

/// Output of the prediction half of a filter step.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

/// Output of the measurement update, keeping the innovation terms the IMM
/// likelihood needs.
#[derive(Debug, Clone)]
pub struct Update {
    pub state: AugmentedState,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// `x̂⁻ = f(x̂, u)`, `P⁻ = F P Fᵀ + Q` with `F` taken at the prior estimate.
pub fn predict(
    s: &AugmentedState,
    model: &dyn PlantModel,
    u: &DVector<f64>,
    q: &DMatrix<f64>,
) -> Result<Prediction> {
    let f = model.jacobian(&s.x, u)?;
    let x = model.transition(&s.x, u)?;
    let p = &f * &s.p * f.transpose() + q;
    Ok(Prediction { x, p })
}

/// Kalman update with the `(I − K H) P⁻` covariance form.
pub fn update(
    pred: &Prediction,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
    r: &DMatrix<f64>,
    k: usize,
) -> Result<Update> {
    if y.len() != h.nrows() || r.nrows() != h.nrows() {
        return Err(DobError::Dimension(format!(
            "measurement has {} entries, H has {} rows, R is {}x{}",
            y.len(),
            h.nrows(),
            r.nrows(),
            r.ncols()
        )));
    }
    let pht = &pred.p * h.transpose();
    let s_cov = h * &pht + r;
    let s_inv = s_cov
        .clone()
        .cholesky()
        .ok_or(DobError::InnovationSingular)?
        .inverse();
    let gain = &pht * s_inv;
    let innovation = y - h * &pred.x;
    let x = &pred.x + &gain * &innovation;
    let n = pred.x.len();
    let mut p = (DMatrix::identity(n, n) - &gain * h) * &pred.p;
    symmetrize(&mut p);
    Ok(Update {
        state: AugmentedState { x, p, k },
        innovation,
        innovation_cov: s_cov,
        gain,
    })
}

/// One predict/update cycle of the EKF disturbance observer.
pub fn ekf_dob_step(
    s: &AugmentedState,
    model: &dyn PlantModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
    nc: &NoiseConfig,
) -> Result<AugmentedState> {
    check_noise_dims(model, nc)?;
    let pred = predict(s, model, u, &nc.process_covariance())?;
    Ok(update(&pred, &model.observation_matrix(), y, &nc.r, s.k + 1)?.state)
}

pub(crate) fn check_noise_dims(model: &dyn PlantModel, nc: &NoiseConfig) -> Result<()> {
    if nc.q_d.nrows() != model.disturbance_dim()
        || nc.state_dim() != model.state_dim()
        || nc.r.nrows() != model.measurement_dim()
    {
        return Err(DobError::Dimension(format!(
            "noise config (Q_d {}, Q_s {}, R {}) does not match the plant (p {}, n {}, m {})",
            nc.q_d.nrows(),
            nc.q_s.nrows(),
            nc.r.nrows(),
            model.disturbance_dim(),
            model.state_dim(),
            model.measurement_dim()
        )));
    }
    Ok(())
}
