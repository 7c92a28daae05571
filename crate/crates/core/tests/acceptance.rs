//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dobkit_core::control::{simulate_injected_lumped_error, ultimate_bound, BoundInputs, DesiredTraj, PdGains};
use dobkit_core::dynamics::{
    forward_dynamics, inverse_dynamics, numerical_jacobian, one_dof_transition, JointVec, OneDofParams,
    TwoLinkParams, REL_STEP,
};
use dobkit_core::observers::{
    ekf_dob_step, mkcekf_dob_step, AugmentedState, Bandwidth, MkcConfig, NoiseConfig,
};
use dobkit_core::simlab::{
    compare, default_markov_grid, monte_carlo_observer, paper_eta_grid, paper_imm, paper_mkc, run_with_observer,
    sweep_markov, ComparisonRow, ObserverSpec, SimScenario, Trace,
};
use dobkit_core::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// Largest gap between two traces over the estimate and torque channels.
fn trace_gap(a: &Trace, b: &Trace) -> f64 {
    let mut gap = 0.0f64;
    for (ra, rb) in a.records.iter().zip(&b.records) {
        for (x, y) in [
            (&ra.d_hat, &rb.d_hat),
            (&ra.theta_hat, &rb.theta_hat),
            (&ra.thetadot_hat, &rb.thetadot_hat),
            (&ra.tau, &rb.tau),
        ] {
            for (u, v) in x.iter().zip(y) {
                gap = gap.max((u - v).abs());
            }
        }
    }
    gap
}

fn lemma3_equivalence() -> Result<Outcome> {
    let start = Instant::now();
    let mut scn = SimScenario::one_dof_friction();
    scn.horizon = 500;
    let infinite = ObserverSpec::Mkc {
        eta: 1.0,
        sigma_d: vec![Bandwidth::Infinite],
        sigma_s: None,
        sigma_r: None,
        eps_fp: 1e-6,
        max_iter: 20,
    };
    let ekf = run_with_observer(&scn, &ObserverSpec::Ekf { eta: 1.0 }, scn.seed)?;
    let mkc = run_with_observer(&scn, &infinite, scn.seed)?;
    let closed_loop = trace_gap(&ekf, &mkc);

    // replay the recorded inputs and measurements to compare covariances as well
    let plant = dobkit_core::dynamics::OneDofPlant::new(OneDofParams::default(), scn.dt)?;
    let nc = NoiseConfig::from_diag(&scn.filter.q_d, &scn.filter.q_s, &scn.filter.r, 1.0)?;
    let mk = MkcConfig::all_infinite(1, 3, 1);
    let r0 = &ekf.records[0];
    let x0 = [r0.d[0], r0.thetadot[0], r0.theta[0]];
    let mut a = AugmentedState::from_diag(&x0, &scn.filter.p0)?;
    let mut b = a.clone();
    let mut replay = 0.0f64;
    for k in 1..ekf.records.len() {
        let u = DVector::from_column_slice(&ekf.records[k - 1].tau);
        let y = DVector::from_column_slice(&ekf.records[k].y);
        a = ekf_dob_step(&a, &plant, &u, &y, &nc)?;
        b = mkcekf_dob_step(&b, &plant, &u, &y, &nc, &mk)?.state;
        replay = replay.max((&a.x - &b.x).amax()).max((&a.p - &b.p).amax());
    }
    let elapsed = start.elapsed();
    outcome(
        closed_loop < 1e-9 && replay < 1e-9 && within(elapsed, 1.0),
        format!("closed-loop gap {closed_loop:.2e}, replay gap {replay:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

/// Counts adjacent pairs that break the required strict ordering.
fn violations(values: &[f64], increasing: bool) -> usize {
    values
        .windows(2)
        .filter(|w| if increasing { !(w[1] > w[0]) } else { !(w[1] < w[0]) })
        .count()
}

fn frontier(rows: &[ComparisonRow], elapsed: Duration) -> Result<Outcome> {
    let eta_rows = &rows[..paper_eta_grid().len()];
    let bias: Vec<f64> = eta_rows.iter().map(|r| r.window_bias_sq[0]).collect();
    let var: Vec<f64> = eta_rows.iter().map(|r| r.window_variance[0]).collect();
    let (vb, vv) = (violations(&bias, false), violations(&var, true));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        vb <= 1 && vv <= 1 && within(elapsed, 120.0),
        format!("bias² [{}] variance [{}], {:.1}s", fmt(&bias), fmt(&var), elapsed.as_secs_f64()),
    )
}

fn dominance(rows: &[ComparisonRow], elapsed: Duration) -> Result<Outcome> {
    let n = paper_eta_grid().len();
    let x1: Vec<f64> = rows.iter().map(|r| r.rmse_state[0].mean).collect();
    let best = x1[..5].iter().copied().fold(f64::INFINITY, f64::min).min(x1[n - 1]);
    let (imm, mkc, base) = (x1[n], x1[n + 1], x1[0]);
    let pass = imm <= best && mkc <= best && imm <= 0.9 * base && mkc <= 0.9 * base && within(elapsed, 120.0);
    outcome(
        pass,
        format!("RMSE(x1) IMM {imm:.3}, MKC {mkc:.3}, best EKF {best:.3}, EKF(e^0) {base:.3}"),
    )
}

fn large_eta(rows: &[ComparisonRow]) -> Result<Outcome> {
    let n = paper_eta_grid().len();
    let x1_40 = rows[n - 1].rmse_state[0].mean;
    let x1_3 = rows[3].rmse_state[0].mean;
    let angles: Vec<f64> = rows[..n].iter().map(|r| r.rmse_angle[0].mean).collect();
    let smallest = angles.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        x1_40 >= 3.0 * x1_3 && angles[n - 1] == smallest,
        format!(
            "RMSE(x1) e^40 {x1_40:.3} vs 3×e^3 {:.3}; angle RMSE e^40 {:.4}, grid min {smallest:.4}",
            3.0 * x1_3,
            angles[n - 1]
        ),
    )
}

fn fixed_point_cost(rows: &[ComparisonRow]) -> Result<Outcome> {
    let mkc_row = &rows[paper_eta_grid().len() + 1];
    let median = mkc_row.median_iterations.unwrap_or(f64::NAN);

    let mut scn = SimScenario::one_dof_friction();
    scn.timing = true;
    let mean_time = |spec: &ObserverSpec| -> Result<f64> {
        let r = monte_carlo_observer(&scn, spec, 10, scn.seed, Some(1))?;
        Ok(r.step_time.map(|t| t.mean).unwrap_or(f64::NAN))
    };
    let ekf = mean_time(&ObserverSpec::Ekf { eta: 1.0 })?;
    let imm = mean_time(&paper_imm())?;
    let mkc = mean_time(&paper_mkc())?;
    let (ri, rm) = (imm / ekf, mkc / ekf);
    outcome(
        (1.0..=4.0).contains(&median) && ri <= 4.0 && rm <= 4.0,
        format!(
            "median iterations {median}; step time EKF {:.2}µs, IMM {ri:.2}×, MKC {rm:.2}×",
            ekf * 1e6
        ),
    )
}

fn dynamics_oracles() -> Result<Outcome> {
    let start = Instant::now();
    let p1 = OneDofParams::default();
    let dt = 0.01;
    let mut jac_err = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let x = DVector::from_vec(vec![
            rng.random_range(-20.0..20.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-3.0..3.0),
        ]);
        let u = rng.random_range(-5.0..5.0);
        let jac = numerical_jacobian(
            |v| Ok(DVector::from_column_slice(&one_dof_transition(&[v[0], v[1], v[2]], u, dt, &p1))),
            &x,
            REL_STEP,
        )?;
        let r = dt / p1.inertia;
        let analytic = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0,
                0.0,
                0.0,
                r,
                (p1.inertia - p1.damping * dt) / p1.inertia,
                -r * (p1.stiffness + p1.mass * p1.gravity * x[2].cos()),
                0.0,
                dt,
                1.0,
            ],
        );
        jac_err = jac_err.max((jac - analytic).amax());
    }

    let p2 = TwoLinkParams::exo_left_leg();
    let (mut skew, mut round_trip) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let theta = JointVec::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let thetadot = JointVec::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let h = 1e-6;
        let m_dot =
            (p2.mass_matrix(&(theta + thetadot * h)) - p2.mass_matrix(&(theta - thetadot * h))) / (2.0 * h);
        let n = m_dot - 2.0 * p2.coriolis_matrix(&theta, &thetadot);
        skew = skew.max((n + n.transpose()).amax());

        let tau = JointVec::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let d = JointVec::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let acc = forward_dynamics(&theta, &thetadot, &tau, &d, &p2)?;
        let back = inverse_dynamics(&theta, &thetadot, &acc, &p2) - tau;
        round_trip = round_trip.max((back - d).amax());
    }
    let elapsed = start.elapsed();
    outcome(
        jac_err < 1e-6 && skew < 1e-8 && round_trip < 1e-9 && within(elapsed, 5.0),
        format!(
            "jacobian {jac_err:.1e}, skew {skew:.1e}, round trip {round_trip:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn imm_simplex_and_collapse() -> Result<Outcome> {
    let mut scn = SimScenario::one_dof_friction();
    scn.horizon = 10_000;
    let trace = run_with_observer(&scn, &paper_imm(), scn.seed)?;
    let simplex = trace
        .records
        .iter()
        .map(|r| {
            let sum: f64 = r.mu.iter().sum();
            let min = r.mu.iter().copied().fold(f64::INFINITY, f64::min);
            (sum - 1.0).abs().max(if min < 0.0 { -min } else { 0.0 })
        })
        .fold(0.0f64, f64::max);

    scn.horizon = 1000;
    let single = ObserverSpec::Imm { etas: vec![1.0], markov: vec![vec![1.0]], mu0: None };
    let imm = run_with_observer(&scn, &single, scn.seed)?;
    let ekf = run_with_observer(&scn, &ObserverSpec::Ekf { eta: 1.0 }, scn.seed)?;
    let collapse = trace_gap(&imm, &ekf);
    outcome(
        simplex < 1e-12 && collapse < 1e-12,
        format!("simplex deviation {simplex:.1e} over 10^4 steps, single-model gap {collapse:.1e}"),
    )
}

fn guub() -> Result<Outcome> {
    let p = TwoLinkParams::exo_left_leg();
    let gains = PdGains::exo_default();
    let eps = 0.01;
    let bound = BoundInputs {
        l_e_bar: 1.0,
        eps,
        alpha1: eps * gains.kp_min() / 4.0,
        alpha2: gains.kd_min() / 4.0,
    };
    let kappa = ultimate_bound(&gains, &bound);
    let w = std::f64::consts::TAU * 0.5;
    let desired = |t: f64| DesiredTraj {
        theta: JointVec::new(0.1 + 0.35 * (w * t).sin(), -0.5 + 0.5 * (w * t).sin()),
        thetadot: JointVec::new(0.35 * w * (w * t).cos(), 0.5 * w * (w * t).cos()),
        thetaddot: JointVec::new(-0.35 * w * w * (w * t).sin(), -0.5 * w * w * (w * t).sin()),
    };
    // ‖l_e(t)‖ ≤ 1 with a switching component
    let lumped = |t: f64| {
        let s = if (t * 3.0).fract() < 0.5 { 1.0 } else { -1.0 };
        JointVec::new(0.6 * (7.0 * t).sin(), 0.5 * s) * 0.99
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut details = Vec::new();
    let mut pass = true;
    for _ in 0..3 {
        let e0 = JointVec::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let edot0 = JointVec::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let path = simulate_injected_lumped_error(&p, &gains, desired, lumped, e0, edot0, 1e-4, 30_000)?;
        let w: Vec<f64> = path.iter().map(|(e, ed)| bound.quadratic_form(e.as_slice(), ed.as_slice())).collect();
        // entry time: the first step after which the form never leaves the set
        let entry = w.iter().rposition(|&v| v > kappa).map_or(0, |last| last + 1);
        let first_touch = w.iter().position(|&v| v <= kappa);
        let peak = w[entry.min(w.len() - 1)..].iter().copied().fold(0.0f64, f64::max);
        let settled = entry < w.len() / 2;
        pass &= settled;
        details.push(format!(
            "first touch {}, entry {:.3}s, max after {peak:.1e}",
            first_touch.map_or("never".into(), |k| format!("{:.3}s", k as f64 * 1e-4)),
            entry as f64 * 1e-4
        ));
    }
    outcome(pass, format!("kappa {kappa:.6}; {}", details.join("; ")))
}

fn determinism() -> Result<Outcome> {
    let mut scn = SimScenario::one_dof_friction();
    scn.horizon = 500;
    let mut reports = Vec::new();
    for spec in [paper_imm(), paper_mkc()] {
        let a = monte_carlo_observer(&scn, &spec, 16, scn.seed, Some(1))?.to_json();
        let b = monte_carlo_observer(&scn, &spec, 16, scn.seed, Some(1))?.to_json();
        let c = monte_carlo_observer(&scn, &spec, 16, scn.seed, Some(8))?.to_json();
        reports.push(a == b && a == c);
    }
    outcome(
        reports.iter().all(|&r| r),
        format!("IMM identical {}, MKC identical {} (1 vs 8 workers, repeated)", reports[0], reports[1]),
    )
}

fn joint_rms(v: &[dobkit_core::simlab::MeanStd]) -> f64 {
    (v.iter().map(|m| m.mean * m.mean).sum::<f64>() / v.len() as f64).sqrt()
}

fn markov_sweep() -> Result<Outcome> {
    let scn = SimScenario::exo_elastic();
    let runs = 10;
    let table = sweep_markov(&scn, &default_markov_grid(), runs, scn.seed, None)?;
    let ekf = monte_carlo_observer(&scn, &ObserverSpec::Ekf { eta: 1.0 }, runs, scn.seed, None)?;
    let ekf_rmse = joint_rms(&ekf.rmse_angle);
    let imm: Vec<f64> = table.rows.iter().map(|r| joint_rms(&r.rmse_angle)).collect();
    let lo = imm.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = imm.iter().copied().fold(0.0f64, f64::max);
    let spread = (hi - lo) / lo;
    outcome(
        spread < 0.25 && hi < ekf_rmse,
        format!(
            "IMM tracking RMSE {:.3e}..{:.3e} (spread {:.1}%), plain EKF {ekf_rmse:.3e}",
            lo,
            hi,
            100.0 * spread
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Result<Outcome>)> = Vec::new();
    results.push(("1 lemma-3 equivalence", lemma3_equivalence()));

    let scn = SimScenario::one_dof_friction();
    let start = Instant::now();
    let table = compare(&scn, 100, scn.seed, None);
    let elapsed = start.elapsed();
    match table {
        Ok(t) => {
            results.push(("2 bias-variance frontier", frontier(&t.rows, elapsed)));
            results.push(("3 observer dominance", dominance(&t.rows, elapsed)));
            results.push(("4 large-eta behaviour", large_eta(&t.rows)));
            results.push(("5 fixed-point cost", fixed_point_cost(&t.rows)));
        }
        Err(e) => {
            for name in ["2 bias-variance frontier", "3 observer dominance", "4 large-eta behaviour", "5 fixed-point cost"] {
                results.push((name, Err(dobkit_core::DobError::Config(format!("comparison failed: {e}")))));
            }
        }
    }
    results.push(("6 dynamics oracles", dynamics_oracles()));
    results.push(("7 IMM simplex and collapse", imm_simplex_and_collapse()));
    results.push(("8 GUUB set membership", guub()));
    results.push(("9 Monte-Carlo determinism", determinism()));
    results.push(("10 Markov sweep robustness", markov_sweep()));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(o) if o.pass => println!("PASS  {name}: {}", o.detail),
            Ok(o) => {
                failed += 1;
                println!("FAIL  {name}: {}", o.detail);
            }
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: error: {e}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
