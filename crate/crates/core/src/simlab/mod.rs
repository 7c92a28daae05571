//! Simulation lab: true disturbances, the closed-loop runner, seeded Monte
//! Carlo, and the accuracy and smoothness metrics.

mod disturbance;
mod metrics;
mod montecarlo;
mod report;
mod runner;
mod scenario;

pub use disturbance::{gen_disturbance, gen_joint_disturbance, DisturbanceProfile};
pub use metrics::{
    butterworth_lowpass, filtfilt, rmse, snr_metric, tracking_metrics, Biquad, TrackingMetrics, SNR_CAP_DB,
};
pub use montecarlo::{
    median, monte_carlo, monte_carlo_observer, summarize, threads_from_env, McReport, MeanStd, RunSummary,
    THREADS_ENV,
};
pub use report::{
    compare, default_markov_grid, default_sigma_grid, sweep_eta, sweep_markov, sweep_sigma, write_trace_csv,
    ComparisonRow, ComparisonTable,
};
pub use runner::{run_closed_loop, run_with_observer, StepRecord, Trace};
pub use scenario::{
    fmt_eta, joint_desired, paper_eta_grid, paper_imm, paper_mkc, paper_observer_set, symmetric_markov,
    FilterSpec, Integrator, ObserverSpec, PlantSpec, RateSource, SimScenario, SnrSpec, TrajectorySpec, SCHEMA_VERSION,
};
