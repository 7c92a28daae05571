//! Disturbance observers over a [`PlantModel`](crate::dynamics::PlantModel):
//! EKF-DOB, IMM-EKF-DOB, MKC-EKF-DOB, the nonlinear DOB and the raw
//! inverse-dynamics estimate.
//!
//! Every step function is pure: it takes the previous estimate and returns
//! the next one.

mod ekf;
mod imm;
mod mkc;
mod ndob;
mod rdob;
mod state;

pub use ekf::{ekf_dob_step, predict, update, Prediction, Update};
pub use imm::{gaussian_log_likelihood, immekf_dob_step, ImmConfig, ImmStep};
pub use mkc::{
    inflated_covariance, mkc_weight_matrix, mkcekf_dob_step, whiten_residuals, Bandwidth,
    MkcConfig, MkcStep, Whitened, MIN_KERNEL_WEIGHT,
};
pub use ndob::{ndob_estimate, ndob_gain, ndob_step, NdobState, DEFAULT_NDOB_GAIN};
pub use rdob::{raw_dob, raw_dob_series};
pub use state::{min_eigenvalue, symmetrize, AugmentedState, NoiseConfig};
