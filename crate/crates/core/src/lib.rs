//! Disturbance observers for robot joints: plant models, augmented-state
//! EKF / IMM / maximum-correntropy estimators, nonlinear and raw observers,
//! an augmented PD controller and a Monte-Carlo simulation lab.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod observers;
pub mod simlab;

pub use error::{DobError, Result};
