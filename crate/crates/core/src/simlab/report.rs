use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::montecarlo::{monte_carlo_observer, McReport, MeanStd};
use super::runner::Trace;
use super::scenario::{paper_imm, symmetric_markov, ObserverSpec, SimScenario, SCHEMA_VERSION};
use crate::error::{DobError, Result};
use crate::observers::Bandwidth;

/// Writes one header row and one row per step. Vector fields expand to one
/// column per entry, suffixed with a 1-based index.
pub fn write_trace_csv<W: Write>(trace: &Trace, timing: bool, mut out: W) -> Result<()> {
    let Some(first) = trace.records.first() else {
        return Ok(());
    };
    let n = trace.joints;
    let groups: [(&str, usize); 12] = [
        ("theta_d", n),
        ("thetadot_d", n),
        ("d", n),
        ("theta", n),
        ("thetadot", n),
        ("y", first.y.len()),
        ("d_hat", n),
        ("theta_hat", n),
        ("thetadot_hat", n),
        ("tau", n),
        ("lumped_error", n),
        ("mu", first.mu.len()),
    ];
    let mut header = vec!["k".to_string(), "t".to_string()];
    for (name, len) in groups {
        header.extend((1..=len).map(|i| format!("{name}_{i}")));
    }
    header.push("iterations".into());
    if timing {
        header.push("step_time".into());
    }
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for r in &trace.records {
        line.clear();
        write!(line, "{},{}", r.k, r.t).unwrap();
        for v in [
            &r.theta_d, &r.thetadot_d, &r.d, &r.theta, &r.thetadot, &r.y, &r.d_hat, &r.theta_hat, &r.thetadot_hat,
            &r.tau, &r.lumped_error, &r.mu,
        ] {
            for x in v.iter() {
                write!(line, ",{x}").unwrap();
            }
        }
        write!(line, ",{}", r.iterations).unwrap();
        if timing {
            write!(line, ",{}", r.step_time).unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// One observer's row in a comparison or sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub observer: String,
    /// Sweep coordinate, when the row belongs to a sweep.
    pub grid_value: Option<f64>,
    pub rmse_state: Vec<MeanStd>,
    pub rmse_angle: Vec<MeanStd>,
    pub rmse_rate: Vec<MeanStd>,
    pub window_bias_sq: Vec<f64>,
    pub window_variance: Vec<f64>,
    pub median_iterations: Option<f64>,
    pub step_time: Option<MeanStd>,
}

impl ComparisonRow {
    pub fn from_report(r: &McReport, grid_value: Option<f64>) -> Self {
        Self {
            observer: r.observer.clone(),
            grid_value,
            rmse_state: r.rmse_state.clone(),
            rmse_angle: r.rmse_angle.clone(),
            rmse_rate: r.rmse_rate.clone(),
            window_bias_sq: r.window_bias_sq.clone(),
            window_variance: r.window_variance.clone(),
            median_iterations: r.median_iterations,
            step_time: r.step_time,
        }
    }
}

/// Rows of a comparison (`parameter` is `None`) or a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub schema_version: u32,
    pub scenario: String,
    pub runs: usize,
    pub base_seed: u64,
    pub parameter: Option<String>,
    pub grid: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    fn columns(&self) -> Vec<String> {
        let row = &self.rows[0];
        let mut cols = vec!["observer".to_string()];
        if let Some(p) = &self.parameter {
            cols.push(p.clone());
        }
        cols.extend((1..=row.rmse_state.len()).map(|i| format!("rmse_x{i}")));
        let joints = row.rmse_angle.len();
        let suffix = |j: usize| if joints == 1 { String::new() } else { format!("_{}", j + 1) };
        cols.extend((0..joints).map(|j| format!("rmse_angle_err{}", suffix(j))));
        cols.extend((0..joints).map(|j| format!("rmse_rate_err{}", suffix(j))));
        cols.extend((0..joints).map(|j| format!("bias_sq{}", suffix(j))));
        cols.extend((0..joints).map(|j| format!("variance{}", suffix(j))));
        if self.rows.iter().any(|r| r.step_time.is_some()) {
            cols.push("step_time_s".into());
        }
        cols
    }

    fn cells(&self, row: &ComparisonRow, pm: &str) -> Vec<String> {
        let ms = |m: &MeanStd| format!("{:.4}{pm}{:.4}", m.mean, m.std);
        let mut c = vec![row.observer.clone()];
        if self.parameter.is_some() {
            c.push(row.grid_value.map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        c.extend(row.rmse_state.iter().map(ms));
        c.extend(row.rmse_angle.iter().map(ms));
        c.extend(row.rmse_rate.iter().map(ms));
        c.extend(row.window_bias_sq.iter().map(|v| format!("{v:.5}")));
        c.extend(row.window_variance.iter().map(|v| format!("{v:.5}")));
        if self.rows.iter().any(|r| r.step_time.is_some()) {
            c.push(row.step_time.map(|m| format!("{:.3e}{pm}{:.1e}", m.mean, m.std)).unwrap_or_default());
        }
        c
    }

    /// Comma-separated table; `mean±std` cells are split into `mean std` pairs.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.rows.is_empty() {
            return out;
        }
        let header: Vec<String> = self
            .columns()
            .into_iter()
            .flat_map(|c| {
                if c.starts_with("rmse") || c.starts_with("step_time") {
                    vec![format!("{c}_mean"), format!("{c}_std")]
                } else {
                    vec![c]
                }
            })
            .collect();
        writeln!(out, "{}", header.join(",")).unwrap();
        for row in &self.rows {
            let cells: Vec<String> = self
                .cells(row, " ")
                .into_iter()
                .map(|c| if c.contains(',') { format!("\"{c}\"") } else { c.replace(' ', ",") })
                .collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    /// Column-aligned plain-text table.
    pub fn to_text(&self) -> String {
        if self.rows.is_empty() {
            return String::new();
        }
        let mut grid = vec![self.columns()];
        grid.extend(self.rows.iter().map(|r| self.cells(r, " ± ")));
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|i| grid.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (li, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
            if li == 0 {
                writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))).unwrap();
            }
        }
        out
    }
}

fn table(
    scn: &SimScenario,
    runs: usize,
    base_seed: u64,
    threads: Option<usize>,
    parameter: Option<&str>,
    points: Vec<(Option<f64>, ObserverSpec)>,
) -> Result<ComparisonTable> {
    let mut rows = Vec::with_capacity(points.len());
    for (g, spec) in &points {
        let r = monte_carlo_observer(scn, spec, runs, base_seed, threads)?;
        rows.push(ComparisonRow::from_report(&r, *g));
    }
    Ok(ComparisonTable {
        schema_version: SCHEMA_VERSION,
        scenario: scn.name.clone(),
        runs,
        base_seed,
        parameter: parameter.map(str::to_string),
        grid: points.iter().filter_map(|p| p.0).collect(),
        rows,
    })
}

/// Monte Carlo of every observer listed in the scenario, one row each.
pub fn compare(scn: &SimScenario, runs: usize, base_seed: u64, threads: Option<usize>) -> Result<ComparisonTable> {
    if scn.observers.len() < 2 {
        return Err(DobError::Config(format!(
            "compare needs at least 2 observers, the scenario lists {}",
            scn.observers.len()
        )));
    }
    let points = scn.observers.iter().map(|o| (None, o.clone())).collect();
    table(scn, runs, base_seed, threads, None, points)
}

/// EKF-DOB over a grid of covariance scales `η`.
pub fn sweep_eta(
    scn: &SimScenario,
    etas: &[f64],
    runs: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<ComparisonTable> {
    let points = etas.iter().map(|&eta| (Some(eta), ObserverSpec::Ekf { eta })).collect();
    table(scn, runs, base_seed, threads, Some("eta"), points)
}

/// MKC-EKF-DOB over a grid of disturbance bandwidths (same value on every joint).
/// Other MKC settings come from the scenario's first MKC observer, if any.
pub fn sweep_sigma(
    scn: &SimScenario,
    sigmas: &[f64],
    runs: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<ComparisonTable> {
    let n = scn.joints();
    let template = scn
        .observers
        .iter()
        .find(|o| matches!(o, ObserverSpec::Mkc { .. }))
        .cloned()
        .unwrap_or(ObserverSpec::Mkc {
            eta: 1.0,
            sigma_d: vec![Bandwidth::Finite(1.0); n],
            sigma_s: None,
            sigma_r: None,
            eps_fp: 1e-6,
            max_iter: 20,
        });
    let points = sigmas
        .iter()
        .map(|&s| {
            let mut spec = template.clone();
            if let ObserverSpec::Mkc { sigma_d, .. } = &mut spec {
                *sigma_d = vec![Bandwidth::Finite(s); n];
            }
            (Some(s), spec)
        })
        .collect();
    table(scn, runs, base_seed, threads, Some("sigma_d"), points)
}

/// Two-model IMM over symmetric Markov matrices `[[p, 1−p], [1−p, p]]`.
/// The model bank comes from the scenario's first two-model IMM observer,
/// falling back to `{Q_d, e⁴ Q_d}`.
pub fn sweep_markov(
    scn: &SimScenario,
    ps: &[f64],
    runs: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<ComparisonTable> {
    let etas = scn
        .observers
        .iter()
        .find_map(|o| match o {
            ObserverSpec::Imm { etas, .. } if etas.len() == 2 => Some(etas.clone()),
            _ => None,
        })
        .unwrap_or_else(|| match paper_imm() {
            ObserverSpec::Imm { etas, .. } => etas,
            _ => unreachable!(),
        });
    let points = ps
        .iter()
        .map(|&p| (Some(p), ObserverSpec::Imm { etas: etas.clone(), markov: symmetric_markov(p), mu0: None }))
        .collect();
    table(scn, runs, base_seed, threads, Some("p"), points)
}

/// `exp(−1), exp(−0.5), …, exp(5)`.
pub fn default_sigma_grid() -> Vec<f64> {
    (0..=12).map(|i| (-1.0 + 0.5 * i as f64).exp()).collect()
}

/// `0.05, 0.10, …, 0.95`.
pub fn default_markov_grid() -> Vec<f64> {
    (1..=19).map(|i| (5 * i) as f64 / 100.0).collect()
}
