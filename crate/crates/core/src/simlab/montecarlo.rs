use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{snr_metric, tracking_metrics};
use super::runner::{run_with_observer, Trace};
use super::scenario::{ObserverSpec, SimScenario, SCHEMA_VERSION};
use crate::control::{ultimate_bound, BoundInputs};
use crate::error::{DobError, Result};

/// Environment variable capping the number of Monte-Carlo worker threads.
pub const THREADS_ENV: &str = "DOBKIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation across runs.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

/// Scalar results of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub observer: String,
    pub seed: u64,
    pub horizon: usize,
    pub rmse_state: Vec<f64>,
    pub rmse_angle: Vec<f64>,
    pub rmse_rate: Vec<f64>,
    /// Command-torque SNR per joint (dB).
    pub snr_db: Vec<f64>,
    /// Largest `‖l_e‖` after burn-in.
    pub lumped_error_max: f64,
    /// Ultimate bound for `l̄_e = lumped_error_max`.
    pub kappa: f64,
    /// Median MKC iteration count; absent for other observers.
    pub median_iterations: Option<f64>,
    pub imm_degenerate: usize,
    pub mkc_diverged: usize,
    /// Mean observer step time (s), only when timing is enabled.
    pub mean_step_time: Option<f64>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Reduces a trace to its summary record.
pub fn summarize(scn: &SimScenario, trace: &Trace) -> Result<RunSummary> {
    let m = tracking_metrics(trace, scn.burn_in);
    let snr_db = (0..trace.joints)
        .map(|j| snr_metric(&trace.torque(j), scn.snr.cutoff, scn.snr.order))
        .collect::<Result<Vec<_>>>()
        .unwrap_or_default();
    let lumped_error_max = trace.records[scn.burn_in..]
        .iter()
        .map(|r| r.lumped_error.iter().map(|l| l * l).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let bound = BoundInputs { l_e_bar: lumped_error_max, eps: scn.bound_eps, alpha1: 1.0, alpha2: 1.0 };
    let iters: Vec<f64> = trace.records.iter().skip(1).map(|r| r.iterations as f64).collect();
    let is_mkc = trace.records.iter().any(|r| r.iterations > 0);
    Ok(RunSummary {
        schema_version: SCHEMA_VERSION,
        scenario: scn.name.clone(),
        observer: trace.observer.clone(),
        seed: trace.seed,
        horizon: trace.len(),
        rmse_state: m.rmse_state,
        rmse_angle: m.rmse_angle,
        rmse_rate: m.rmse_rate,
        snr_db,
        lumped_error_max,
        kappa: ultimate_bound(&scn.gains, &bound),
        median_iterations: is_mkc.then(|| median(iters)),
        imm_degenerate: trace.imm_degenerate,
        mkc_diverged: trace.mkc_diverged,
        mean_step_time: scn
            .timing
            .then(|| trace.records.iter().map(|r| r.step_time).sum::<f64>() / trace.len() as f64),
    })
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ensemble statistics of `K` seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema_version: u32,
    pub scenario: String,
    pub observer: String,
    pub runs: usize,
    pub base_seed: u64,
    pub window: [usize; 2],
    pub burn_in: usize,
    /// `b_{d,k} = mean(d − d̂)`, indexed `[joint][k]`.
    pub bias: Vec<Vec<f64>>,
    /// `σ_{d,k}`, population standard deviation of `d − d̂`, indexed `[joint][k]`.
    pub std: Vec<Vec<f64>>,
    /// Window average of `b_{d,k}²` per joint.
    pub window_bias_sq: Vec<f64>,
    /// Window average of `σ_{d,k}²` per joint.
    pub window_variance: Vec<f64>,
    pub rmse_state: Vec<MeanStd>,
    pub rmse_angle: Vec<MeanStd>,
    pub rmse_rate: Vec<MeanStd>,
    pub snr_db: Vec<MeanStd>,
    pub kappa: f64,
    pub median_iterations: Option<f64>,
    pub imm_degenerate: usize,
    pub mkc_diverged: usize,
    pub step_time: Option<MeanStd>,
}

impl McReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Thread cap from `DOBKIT_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Monte Carlo of the scenario's first observer with the thread cap from the environment.
pub fn monte_carlo(scn: &SimScenario, runs: usize, base_seed: u64) -> Result<McReport> {
    monte_carlo_observer(scn, &scn.observers[0], runs, base_seed, threads_from_env())
}

/// `runs` independent closed-loop runs seeded `base_seed + i`.
///
/// Runs execute in parallel (at most `threads` workers when given); results
/// are reduced in run order, so the report does not depend on scheduling.
pub fn monte_carlo_observer(
    scn: &SimScenario,
    spec: &ObserverSpec,
    runs: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<McReport> {
    if runs < 2 {
        return Err(DobError::Config(format!("Monte Carlo needs at least 2 runs, got {runs}")));
    }
    scn.validate()?;
    scn.validate_observer(spec)?;
    let one = |i: usize| -> Result<(RunSummary, Vec<Vec<f64>>, Vec<f64>)> {
        let seed = base_seed.wrapping_add(i as u64);
        let trace = run_with_observer(scn, spec, seed)?;
        let errors = (0..trace.joints)
            .map(|j| trace.records.iter().map(|r| r.d[j] - r.d_hat[j]).collect())
            .collect();
        let iters = trace.records.iter().skip(1).map(|r| r.iterations as f64).collect();
        Ok((summarize(scn, &trace)?, errors, iters))
    };
    let results: Vec<Result<_>> = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| DobError::Config(format!("thread pool: {e}")))?
            .install(|| (0..runs).into_par_iter().map(one).collect()),
        None => (0..runs).into_par_iter().map(one).collect(),
    };
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(reduce(scn, spec, base_seed, results))
}

fn reduce(
    scn: &SimScenario,
    spec: &ObserverSpec,
    base_seed: u64,
    results: Vec<(RunSummary, Vec<Vec<f64>>, Vec<f64>)>,
) -> McReport {
    let k_runs = results.len() as f64;
    let joints = scn.joints();
    let horizon = scn.horizon;
    let mut bias = vec![vec![0.0; horizon]; joints];
    let mut std = vec![vec![0.0; horizon]; joints];
    for j in 0..joints {
        for k in 0..horizon {
            let b = results.iter().map(|r| r.1[j][k]).sum::<f64>() / k_runs;
            let v = results.iter().map(|r| (r.1[j][k] - b).powi(2)).sum::<f64>() / k_runs;
            bias[j][k] = b;
            std[j][k] = v.sqrt();
        }
    }
    let [m1, m2] = scn.window;
    let span = (m2 - m1 + 1) as f64;
    let window_bias_sq = bias.iter().map(|b| b[m1..=m2].iter().map(|v| v * v).sum::<f64>() / span).collect();
    let window_variance = std.iter().map(|s| s[m1..=m2].iter().map(|v| v * v).sum::<f64>() / span).collect();
    let column = |get: &dyn Fn(&RunSummary) -> &Vec<f64>| -> Vec<MeanStd> {
        let width = get(&results[0].0).len();
        (0..width)
            .map(|i| MeanStd::of(&results.iter().map(|r| get(&r.0)[i]).collect::<Vec<_>>()))
            .collect()
    };
    let summaries: Vec<&RunSummary> = results.iter().map(|r| &r.0).collect();
    let l_bar = summaries.iter().map(|s| s.lumped_error_max).fold(0.0, f64::max);
    let is_mkc = matches!(spec, ObserverSpec::Mkc { .. });
    McReport {
        schema_version: SCHEMA_VERSION,
        scenario: scn.name.clone(),
        observer: spec.label(),
        runs: results.len(),
        base_seed,
        window: scn.window,
        burn_in: scn.burn_in,
        window_bias_sq,
        window_variance,
        bias,
        std,
        rmse_state: column(&|s| &s.rmse_state),
        rmse_angle: column(&|s| &s.rmse_angle),
        rmse_rate: column(&|s| &s.rmse_rate),
        snr_db: column(&|s| &s.snr_db),
        kappa: ultimate_bound(&scn.gains, &BoundInputs { l_e_bar: l_bar, eps: scn.bound_eps, alpha1: 1.0, alpha2: 1.0 }),
        median_iterations: is_mkc.then(|| median(results.iter().flat_map(|r| r.2.iter().copied()).collect())),
        imm_degenerate: summaries.iter().map(|s| s.imm_degenerate).sum(),
        mkc_diverged: summaries.iter().map(|s| s.mkc_diverged).sum(),
        step_time: scn
            .timing
            .then(|| MeanStd::of(&summaries.iter().filter_map(|s| s.mean_step_time).collect::<Vec<_>>())),
    }
}
