use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dobkit_core::simlab::{
    compare, default_markov_grid, default_sigma_grid, monte_carlo_observer, paper_eta_grid, run_closed_loop,
    summarize, sweep_eta, sweep_markov, sweep_sigma, threads_from_env, write_trace_csv, ComparisonRow,
    ComparisonTable, SimScenario, SCHEMA_VERSION,
};
use dobkit_core::DobError;

#[derive(Parser)]
#[command(name = "dobkit", version, about = "Disturbance-observer simulation toolkit")]
struct Cli {
    /// Suppress table output on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run with the first observer: trace CSV and summary JSON.
    Run(Common),
    /// Monte Carlo of the first observer: report JSON.
    Mc(Common),
    /// EKF-DOB over a grid of disturbance covariance scales.
    SweepEta(Sweep),
    /// MKC-EKF-DOB over a grid of disturbance kernel bandwidths.
    SweepSigma(Sweep),
    /// Two-model IMM over symmetric Markov matrices [[p,1-p],[1-p,p]].
    SweepMarkov(Sweep),
    /// Monte Carlo of every observer in the scenario, one table row each.
    Compare(Common),
    /// Print or save a built-in scenario.
    Preset {
        /// One of: one-dof-friction, exo-elastic.
        name: String,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "dobkit-out")]
    out: PathBuf,
    /// Overrides the scenario seed (base seed for Monte Carlo).
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo runs per observer.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Record observer step times. Timed outputs are not reproducible.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct Sweep {
    #[command(flatten)]
    common: Common,
    /// Comma-separated grid overriding the default.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: String) -> Self {
        Self { code: 2, message }
    }

    fn from_dob(e: DobError) -> Self {
        let code = if e.is_config() { 2 } else { 3 };
        Self { code, message: e.to_string() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { code: 3, message: format!("{}: {e}", path.display()) }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(c: &Common) -> Result<SimScenario, Failure> {
    let mut scn = SimScenario::load(&c.config)
        .map_err(|e| Failure::config(format!("{}: {e}", c.config.display())))?;
    if let Some(seed) = c.seed {
        scn.seed = seed;
    }
    scn.timing = c.timing;
    Ok(scn)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let say = |text: &str| {
        if !cli.quiet {
            print!("{text}");
        }
    };
    let threads = threads_from_env();
    match &cli.command {
        Command::Preset { name, out } => {
            let scn = SimScenario::preset(name).ok_or_else(|| {
                Failure::config(format!("unknown preset '{name}' (known: {})", SimScenario::PRESETS.join(", ")))
            })?;
            let text = scn.to_json() + "\n";
            match out {
                Some(path) => write(path, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Run(c) => {
            let scn = load(c)?;
            prepare_out(&c.out)?;
            let trace = run_closed_loop(&scn).map_err(Failure::from_dob)?;
            let summary = summarize(&scn, &trace).map_err(Failure::from_dob)?;
            let csv_path = c.out.join("trace.csv");
            let file = fs::File::create(&csv_path).map_err(|e| Failure::io(&csv_path, e))?;
            write_trace_csv(&trace, scn.timing, BufWriter::new(file)).map_err(Failure::from_dob)?;
            write(&c.out.join("summary.json"), &(summary.to_json() + "\n"))?;
            say(&format!(
                "{}: {} steps, rmse x = [{}], tracking rmse = [{}]\n",
                summary.observer,
                summary.horizon,
                fmt_list(&summary.rmse_state),
                fmt_list(&summary.rmse_angle)
            ));
            Ok(())
        }
        Command::Mc(c) => {
            let scn = load(c)?;
            prepare_out(&c.out)?;
            let seed = c.seed.unwrap_or(scn.seed);
            let report =
                monte_carlo_observer(&scn, &scn.observers[0], c.runs, seed, threads).map_err(Failure::from_dob)?;
            write(&c.out.join("mc_report.json"), &(report.to_json() + "\n"))?;
            let table = ComparisonTable {
                schema_version: SCHEMA_VERSION,
                scenario: scn.name.clone(),
                runs: c.runs,
                base_seed: seed,
                parameter: None,
                grid: vec![],
                rows: vec![ComparisonRow::from_report(&report, None)],
            };
            say(&table.to_text());
            Ok(())
        }
        Command::Compare(c) => {
            let scn = load(c)?;
            if scn.observers.len() < 2 {
                return Err(Failure::config(format!(
                    "{}: compare needs at least 2 observers, found {}",
                    c.config.display(),
                    scn.observers.len()
                )));
            }
            prepare_out(&c.out)?;
            let t = compare(&scn, c.runs, c.seed.unwrap_or(scn.seed), threads).map_err(Failure::from_dob)?;
            emit_table(&c.out, "compare", &t, &say)
        }
        Command::SweepEta(s) => {
            let scn = load(&s.common)?;
            prepare_out(&s.common.out)?;
            let grid = s.grid.clone().unwrap_or_else(paper_eta_grid);
            let t = sweep_eta(&scn, &grid, s.common.runs, s.common.seed.unwrap_or(scn.seed), threads)
                .map_err(Failure::from_dob)?;
            emit_table(&s.common.out, "sweep_eta", &t, &say)
        }
        Command::SweepSigma(s) => {
            let scn = load(&s.common)?;
            prepare_out(&s.common.out)?;
            let grid = s.grid.clone().unwrap_or_else(default_sigma_grid);
            let t = sweep_sigma(&scn, &grid, s.common.runs, s.common.seed.unwrap_or(scn.seed), threads)
                .map_err(Failure::from_dob)?;
            emit_table(&s.common.out, "sweep_sigma", &t, &say)
        }
        Command::SweepMarkov(s) => {
            let scn = load(&s.common)?;
            prepare_out(&s.common.out)?;
            let grid = s.grid.clone().unwrap_or_else(default_markov_grid);
            let t = sweep_markov(&scn, &grid, s.common.runs, s.common.seed.unwrap_or(scn.seed), threads)
                .map_err(Failure::from_dob)?;
            emit_table(&s.common.out, "sweep_markov", &t, &say)
        }
    }
}

fn emit_table(dir: &Path, stem: &str, t: &ComparisonTable, say: &dyn Fn(&str)) -> Result<(), Failure> {
    write(&dir.join(format!("{stem}.json")), &(t.to_json() + "\n"))?;
    write(&dir.join(format!("{stem}.csv")), &t.to_csv())?;
    let text = t.to_text();
    write(&dir.join(format!("{stem}.txt")), &text)?;
    say(&text);
    Ok(())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}
