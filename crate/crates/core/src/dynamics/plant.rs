use nalgebra::{DMatrix, DVector};

use super::jacobian::{numerical_jacobian, REL_STEP};
use super::one_dof::{one_dof_transition, OneDofParams};
use super::two_link::{exo_transition, JointVec, TwoLinkParams};
use crate::error::{DobError, Result};

/// Discrete-time model seen by the observers.
///
/// The augmented state always stacks the disturbance block first:
/// `x = [d (p entries), s (n − p entries)]`. Measurements are linear, `y = H x`.
pub trait PlantModel: Send + Sync {
    /// Length `n` of the augmented state.
    fn state_dim(&self) -> usize;
    /// Length `p` of the disturbance block.
    fn disturbance_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Sampling interval (s).
    fn dt(&self) -> f64;
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// Constant observation matrix `H` (m × n).
    fn observation_matrix(&self) -> DMatrix<f64>;

    fn measurement_dim(&self) -> usize {
        self.observation_matrix().nrows()
    }

    /// `F = ∂f/∂x` at `(x, u)`; central differences unless overridden.
    fn jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        numerical_jacobian(|v| self.transition(v, u), x, REL_STEP)
    }
}

/// The 1-DOF manipulator with `x = [d, θ̇, θ]` and an angle-only measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneDofPlant {
    pub params: OneDofParams,
    pub dt: f64,
}

impl OneDofPlant {
    pub fn new(params: OneDofParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(DobError::Config("dt must be positive".into()));
        }
        Ok(Self { params, dt })
    }
}

impl PlantModel for OneDofPlant {
    fn state_dim(&self) -> usize {
        3
    }

    fn disturbance_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims(x.len(), 3, u.len(), 1)?;
        let next = one_dof_transition(&[x[0], x[1], x[2]], u[0], self.dt, &self.params);
        Ok(DVector::from_row_slice(&next))
    }

    fn observation_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0])
    }
}

/// The two-link leg with `x = [d(2), θ(2), θ̇(2)]`; angles and rates are measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExoPlant {
    pub params: TwoLinkParams,
    pub dt: f64,
}

impl ExoPlant {
    pub fn new(params: TwoLinkParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(DobError::Config("dt must be positive".into()));
        }
        Ok(Self { params, dt })
    }
}

impl PlantModel for ExoPlant {
    fn state_dim(&self) -> usize {
        6
    }

    fn disturbance_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims(x.len(), 6, u.len(), 2)?;
        let state = [x[0], x[1], x[2], x[3], x[4], x[5]];
        let next = exo_transition(&state, &JointVec::new(u[0], u[1]), self.dt, &self.params)?;
        Ok(DVector::from_row_slice(&next))
    }

    fn observation_matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(4, 6);
        for i in 0..4 {
            h[(i, i + 2)] = 1.0;
        }
        h
    }
}

/// Linear plant `x' = A x + B u`, `y = H x`. Handy for tests and toy studies.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub disturbance_dim: usize,
    pub dt: f64,
}

impl PlantModel for LinearPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn disturbance_dim(&self) -> usize {
        self.disturbance_dim
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims(x.len(), self.a.ncols(), u.len(), self.b.ncols())?;
        Ok(&self.a * x + &self.b * u)
    }

    fn observation_matrix(&self) -> DMatrix<f64> {
        self.h.clone()
    }

    fn jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }
}

fn check_dims(x: usize, n: usize, u: usize, m: usize) -> Result<()> {
    if x != n || u != m {
        return Err(DobError::Dimension(format!(
            "expected state {n} and input {m}, got {x} and {u}"
        )));
    }
    Ok(())
}
