use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::disturbance::gen_joint_disturbance;
use super::scenario::{joint_desired, Integrator, ObserverSpec, PlantSpec, RateSource, SimScenario};
use crate::control::{augmented_pd_parts, feedforward, one_dof_feedforward, one_dof_pd_parts, saturate, DesiredTraj};
use crate::dynamics::{
    exo_transition, one_dof_transition, rk4_step, ExoPlant, JointVec, OneDofPlant, PlantModel,
};
use crate::error::{DobError, Result};
use crate::observers::{
    ekf_dob_step, immekf_dob_step, mkcekf_dob_step, ndob_estimate, ndob_step, AugmentedState, Bandwidth,
    ImmConfig, MkcConfig, NdobState, NoiseConfig,
};

/// Everything observed at one step of a closed-loop run. Vectors hold one
/// entry per joint unless noted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub theta_d: Vec<f64>,
    pub thetadot_d: Vec<f64>,
    pub d: Vec<f64>,
    pub theta: Vec<f64>,
    pub thetadot: Vec<f64>,
    /// Measurement vector.
    pub y: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub thetadot_hat: Vec<f64>,
    pub tau: Vec<f64>,
    /// `l_e = −K_d θ̇̃_e − K_p θ̃_e − d̃_e − δ`.
    pub lumped_error: Vec<f64>,
    /// IMM model probabilities; empty for other observers.
    pub mu: Vec<f64>,
    /// MKC fixed-point iterations; 0 for other observers.
    pub iterations: usize,
    /// Wall time of the observer step (s); 0 unless timing is enabled.
    pub step_time: f64,
}

/// Per-step records of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub observer: String,
    pub joints: usize,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// IMM steps where every likelihood underflowed.
    pub imm_degenerate: usize,
    /// MKC steps that hit the iteration cap without settling.
    pub mkc_diverged: usize,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Augmented true state at step `k`, in the observer's ordering.
    pub fn true_state(&self, k: usize) -> Vec<f64> {
        let r = &self.records[k];
        augmented(self.joints, &r.d, &r.theta, &r.thetadot)
    }

    pub fn estimated_state(&self, k: usize) -> Vec<f64> {
        let r = &self.records[k];
        augmented(self.joints, &r.d_hat, &r.theta_hat, &r.thetadot_hat)
    }

    /// Commanded torque of one joint over the run.
    pub fn torque(&self, joint: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.tau[joint]).collect()
    }
}

/// `[d, θ̇, θ]` for one joint, `[d, θ, θ̇]` stacked by block for two.
fn augmented(joints: usize, d: &[f64], theta: &[f64], thetadot: &[f64]) -> Vec<f64> {
    if joints == 1 {
        vec![d[0], thetadot[0], theta[0]]
    } else {
        d.iter().chain(theta).chain(thetadot).copied().collect()
    }
}

enum Plant {
    OneDof(OneDofPlant),
    Exo(ExoPlant),
}

impl Plant {
    fn model(&self) -> &dyn PlantModel {
        match self {
            Plant::OneDof(p) => p,
            Plant::Exo(p) => p,
        }
    }
}

enum Runtime {
    Ekf { state: AugmentedState, nc: NoiseConfig },
    Imm { states: Vec<AugmentedState>, mu: DVector<f64>, cfg: ImmConfig, fused: AugmentedState },
    Mkc { state: AugmentedState, nc: NoiseConfig, mk: MkcConfig },
    Ndob { nd: NdobState },
    None { prev_angle: Vec<f64> },
    Oracle,
}

struct Estimate {
    d: Vec<f64>,
    theta: Vec<f64>,
    thetadot: Vec<f64>,
    mu: Vec<f64>,
    iterations: usize,
}

fn split(joints: usize, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    if joints == 1 {
        (vec![x[0]], vec![x[2]], vec![x[1]])
    } else {
        (vec![x[0], x[1]], vec![x[2], x[3]], vec![x[4], x[5]])
    }
}

fn noise_config(scn: &SimScenario, eta: f64) -> Result<NoiseConfig> {
    let f = &scn.filter;
    NoiseConfig::from_diag(&f.q_d, &f.q_s, &f.r, eta)
}

fn build_runtime(scn: &SimScenario, spec: &ObserverSpec, x0: &[f64], thetadot0: &[f64]) -> Result<Runtime> {
    let init = || AugmentedState::from_diag(x0, &scn.filter.p0);
    let n = scn.joints();
    Ok(match spec {
        ObserverSpec::Ekf { eta } => Runtime::Ekf { state: init()?, nc: noise_config(scn, *eta)? },
        ObserverSpec::Imm { etas, markov, mu0 } => {
            let bank = etas.iter().map(|e| noise_config(scn, *e)).collect::<Result<Vec<_>>>()?;
            let rows = markov.len();
            let flat: Vec<f64> = markov.iter().flatten().copied().collect();
            let mut cfg = ImmConfig::new(bank, DMatrix::from_row_slice(rows, rows, &flat))?;
            if let Some(mu) = mu0 {
                cfg.mu0 = DVector::from_column_slice(mu);
                cfg.validate()?;
            }
            let s = init()?;
            Runtime::Imm { states: vec![s.clone(); rows], mu: cfg.mu0.clone(), cfg, fused: s }
        }
        ObserverSpec::Mkc { eta, sigma_d, sigma_s, sigma_r, eps_fp, max_iter } => {
            let m = scn.plant.measurement_dim();
            let mk = MkcConfig {
                sigma_d: sigma_d.clone(),
                sigma_s: sigma_s.clone().unwrap_or_else(|| vec![Bandwidth::Infinite; 2 * n]),
                sigma_r: sigma_r.clone().unwrap_or_else(|| vec![Bandwidth::Infinite; m]),
                eps_fp: *eps_fp,
                max_iter: *max_iter,
            };
            mk.validate()?;
            Runtime::Mkc { state: init()?, nc: noise_config(scn, *eta)?, mk }
        }
        ObserverSpec::Ndob { c } => Runtime::Ndob {
            nd: NdobState::with_estimate(
                *c,
                &JointVec::new(x0[0], x0[1]),
                &JointVec::new(thetadot0[0], thetadot0[1]),
            )?,
        },
        ObserverSpec::None => Runtime::None { prev_angle: Vec::new() },
        ObserverSpec::Oracle => Runtime::Oracle,
    })
}

/// Runs the scenario with its first observer.
pub fn run_closed_loop(scn: &SimScenario) -> Result<Trace> {
    run_with_observer(scn, &scn.observers[0], scn.seed)
}

/// Simulates the closed loop for `scn.horizon` steps.
///
/// Per step: draw the true disturbance from the true rate, measure, run the
/// observer on the previous input and the new measurement, compute the
/// control, record, and advance the plant.
pub fn run_with_observer(scn: &SimScenario, spec: &ObserverSpec, seed: u64) -> Result<Trace> {
    scn.validate()?;
    scn.validate_observer(spec)?;
    let n = scn.joints();
    let dt = scn.dt;
    let plant = match &scn.plant {
        PlantSpec::OneDof { params } => Plant::OneDof(OneDofPlant::new(*params, dt)?),
        PlantSpec::Exo { params } => Plant::Exo(ExoPlant::new(*params, dt)?),
    };
    let model = plant.model();
    let h = model.observation_matrix();
    let meas_std = scn.measurement_std();
    let desired = scn.trajectory.sample(n, dt, scn.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut theta: Vec<f64> = (0..n).map(|j| desired[j][0].theta).collect();
    let mut thetadot: Vec<f64> = (0..n).map(|j| desired[j][0].thetadot).collect();
    let mut runtime: Option<Runtime> = None;
    let mut u_prev = DVector::zeros(n);
    let mut records = Vec::with_capacity(scn.horizon);
    let (mut imm_degenerate, mut mkc_diverged) = (0, 0);

    for k in 0..scn.horizon {
        let step = |e: DobError| e.at_step(k);
        let d: Vec<f64> = (0..n)
            .map(|j| {
                let rate = match scn.disturbance_rate {
                    RateSource::True => thetadot[j],
                    RateSource::Desired => desired[j][k].thetadot,
                };
                gen_joint_disturbance(&scn.disturbance[j], rate, k, dt, &mut rng)
            })
            .collect();
        let x_true = DVector::from_vec(augmented(n, &d, &theta, &thetadot));
        let mut y = &h * &x_true;
        for (i, yi) in y.iter_mut().enumerate() {
            let w: f64 = StandardNormal.sample(&mut rng);
            *yi += meas_std[i] * w;
        }

        let started = scn.timing.then(Instant::now);
        let est = match runtime.as_mut() {
            None => {
                let rt = build_runtime(scn, spec, x_true.as_slice(), &thetadot).map_err(step)?;
                let est = initial_estimate(&rt, n, &x_true, &y);
                runtime = Some(rt);
                est
            }
            Some(rt) => observe(rt, model, n, &u_prev, &y, &x_true, dt, &mut imm_degenerate, &mut mkc_diverged)
                .map_err(step)?,
        };
        let step_time = started.map_or(0.0, |s| s.elapsed().as_secs_f64());

        let (tau, lumped) = control(scn, &plant, &desired, k, &est, &d, &theta, &thetadot);
        let tau: Vec<f64> = tau.into_iter().map(|t| saturate(t, scn.torque_limit)).collect();

        records.push(StepRecord {
            k,
            t: k as f64 * dt,
            theta_d: (0..n).map(|j| desired[j][k].theta).collect(),
            thetadot_d: (0..n).map(|j| desired[j][k].thetadot).collect(),
            d: d.clone(),
            theta: theta.clone(),
            thetadot: thetadot.clone(),
            y: y.iter().copied().collect(),
            d_hat: est.d,
            theta_hat: est.theta,
            thetadot_hat: est.thetadot,
            tau: tau.clone(),
            lumped_error: lumped,
            mu: est.mu,
            iterations: est.iterations,
            step_time,
        });

        if let Some(Runtime::Ndob { nd }) = runtime.as_mut() {
            let (th, thd) = (JointVec::new(y[0], y[1]), JointVec::new(y[2], y[3]));
            let PlantSpec::Exo { params } = &scn.plant else { unreachable!("validated") };
            *nd = ndob_step(nd, &th, &thd, &JointVec::new(tau[0], tau[1]), params, dt).map_err(step)?.0;
        }

        match &plant {
            Plant::OneDof(p) => {
                let next = one_dof_transition(&[d[0], thetadot[0], theta[0]], tau[0], dt, &p.params);
                thetadot = vec![next[1]];
                theta = vec![next[2]];
            }
            Plant::Exo(p) => {
                let tau_v = JointVec::new(tau[0], tau[1]);
                let (q, qd) = match scn.integrator {
                    Integrator::Euler => {
                        let x = [d[0], d[1], theta[0], theta[1], thetadot[0], thetadot[1]];
                        let next = exo_transition(&x, &tau_v, dt, &p.params).map_err(step)?;
                        (vec![next[2], next[3]], vec![next[4], next[5]])
                    }
                    Integrator::Rk4 => {
                        let (q, qd) = rk4_step(
                            &JointVec::new(theta[0], theta[1]),
                            &JointVec::new(thetadot[0], thetadot[1]),
                            &tau_v,
                            &JointVec::new(d[0], d[1]),
                            dt,
                            &p.params,
                        )
                        .map_err(step)?;
                        (vec![q[0], q[1]], vec![qd[0], qd[1]])
                    }
                };
                theta = q;
                thetadot = qd;
            }
        }
        if theta.iter().chain(&thetadot).any(|v| !v.is_finite()) {
            return Err(DobError::NonFinite { context: "plant state" }.at_step(k));
        }
        u_prev = DVector::from_column_slice(&tau);
    }

    Ok(Trace {
        observer: spec.label(),
        joints: n,
        seed,
        records,
        imm_degenerate,
        mkc_diverged,
    })
}

fn initial_estimate(rt: &Runtime, n: usize, x_true: &DVector<f64>, y: &DVector<f64>) -> Estimate {
    let (d, theta, thetadot) = split(n, x_true);
    match rt {
        Runtime::None { .. } => Estimate {
            d: vec![0.0; n],
            theta: y.iter().take(n).copied().collect(),
            thetadot,
            mu: vec![],
            iterations: 0,
        },
        Runtime::Imm { mu, .. } => Estimate { d, theta, thetadot, mu: mu.iter().copied().collect(), iterations: 0 },
        _ => Estimate { d, theta, thetadot, mu: vec![], iterations: 0 },
    }
}

#[allow(clippy::too_many_arguments)]
fn observe(
    rt: &mut Runtime,
    model: &dyn PlantModel,
    n: usize,
    u_prev: &DVector<f64>,
    y: &DVector<f64>,
    x_true: &DVector<f64>,
    dt: f64,
    imm_degenerate: &mut usize,
    mkc_diverged: &mut usize,
) -> Result<Estimate> {
    let from_state = |x: &DVector<f64>, mu: Vec<f64>, iterations: usize| {
        let (d, theta, thetadot) = split(n, x);
        Estimate { d, theta, thetadot, mu, iterations }
    };
    Ok(match rt {
        Runtime::Ekf { state, nc } => {
            *state = ekf_dob_step(state, model, u_prev, y, nc)?;
            from_state(&state.x, vec![], 0)
        }
        Runtime::Imm { states, mu, cfg, fused } => {
            let out = immekf_dob_step(states, mu, model, u_prev, y, cfg)?;
            if out.degenerate {
                *imm_degenerate += 1;
            }
            *states = out.states;
            *mu = out.mu;
            *fused = out.fused;
            from_state(&fused.x, mu.iter().copied().collect(), 0)
        }
        Runtime::Mkc { state, nc, mk } => {
            let out = mkcekf_dob_step(state, model, u_prev, y, nc, mk)?;
            if out.diverged {
                *mkc_diverged += 1;
            }
            *state = out.state;
            from_state(&state.x, vec![], out.iterations)
        }
        Runtime::Ndob { nd } => {
            let d = ndob_estimate(nd, &JointVec::new(y[2], y[3]));
            Estimate {
                d: vec![d[0], d[1]],
                theta: vec![y[0], y[1]],
                thetadot: vec![y[2], y[3]],
                mu: vec![],
                iterations: 0,
            }
        }
        Runtime::None { prev_angle } => {
            let angle: Vec<f64> = y.iter().take(n).copied().collect();
            let rate = if n == 1 {
                let prev = prev_angle.first().copied().unwrap_or(x_true[2]);
                vec![(angle[0] - prev) / dt]
            } else {
                vec![y[2], y[3]]
            };
            *prev_angle = angle.clone();
            Estimate { d: vec![0.0; n], theta: angle, thetadot: rate, mu: vec![], iterations: 0 }
        }
        Runtime::Oracle => from_state(x_true, vec![], 0),
    })
}

/// Torque command and lumped-error diagnostic for step `k`.
#[allow(clippy::too_many_arguments)]
fn control(
    scn: &SimScenario,
    plant: &Plant,
    desired: &[Vec<DesiredTraj<f64>>],
    k: usize,
    est: &Estimate,
    d: &[f64],
    theta: &[f64],
    thetadot: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let g = &scn.gains;
    match plant {
        Plant::OneDof(p) => {
            let des = desired[0][k];
            let u = one_dof_pd_parts(est.d[0], est.thetadot[0], est.theta[0], &des, g, &p.params);
            let delta = one_dof_feedforward(est.theta[0], &des, &p.params) - one_dof_feedforward(theta[0], &des, &p.params);
            let le = -g.kd[0] * (thetadot[0] - est.thetadot[0]) - g.kp[0] * (theta[0] - est.theta[0])
                - (est.d[0] - d[0])
                - delta;
            (vec![u], vec![le])
        }
        Plant::Exo(p) => {
            let des = joint_desired(desired, k);
            let v = |s: &[f64]| JointVec::new(s[0], s[1]);
            let (th_hat, thd_hat) = (v(&est.theta), v(&est.thetadot));
            let tau = augmented_pd_parts(&v(&est.d), &th_hat, &thd_hat, &des, g, &p.params);
            let delta = feedforward(&th_hat, &thd_hat, &des, &p.params) - feedforward(&v(theta), &v(thetadot), &des, &p.params);
            let le: Vec<f64> = (0..2)
                .map(|j| {
                    -g.kd[j] * (thetadot[j] - est.thetadot[j]) - g.kp[j] * (theta[j] - est.theta[j])
                        - (est.d[j] - d[j])
                        - delta[j]
                })
                .collect();
            (vec![tau[0], tau[1]], le)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::disturbance::DisturbanceProfile;

    fn quiet(mut s: SimScenario) -> SimScenario {
        let n = s.joints();
        s.disturbance = vec![vec![DisturbanceProfile::Constant { value: 0.0, noise_std: 0.0 }]; n];
        s.measurement_std = Some(vec![0.0; s.plant.measurement_dim()]);
        s
    }

    #[test]
    fn noise_free_one_dof_tracks_exactly() {
        let s = quiet(SimScenario::one_dof_friction());
        for spec in [ObserverSpec::Ekf { eta: 1.0 }, ObserverSpec::Oracle] {
            let tr = run_with_observer(&s, &spec, 1).unwrap();
            assert_eq!(tr.len(), s.horizon);
            let worst = tr.records.iter().map(|r| (r.theta_d[0] - r.theta[0]).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-6, "{}: {worst}", spec.label());
        }
    }

    #[test]
    fn noise_free_exo_tracks_exactly() {
        let mut s = quiet(SimScenario::exo_elastic());
        s.horizon = 1500;
        s.window = [0, 10];
        let tr = run_with_observer(&s, &ObserverSpec::Ekf { eta: 1.0 }, 1).unwrap();
        let worst = tr
            .records
            .iter()
            .flat_map(|r| (0..2).map(move |j| (r.theta_d[j] - r.theta[j]).abs()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn same_seed_same_trace() {
        let mut s = SimScenario::one_dof_friction();
        s.horizon = 400;
        s.window = [100, 200];
        for spec in &s.observers {
            let a = run_with_observer(&s, spec, 9).unwrap();
            let b = run_with_observer(&s, spec, 9).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn oracle_has_no_lumped_error() {
        let mut s = SimScenario::exo_elastic();
        s.horizon = 200;
        s.window = [0, 10];
        let tr = run_with_observer(&s, &ObserverSpec::Oracle, 3).unwrap();
        assert!(tr.records.iter().all(|r| r.lumped_error.iter().all(|l| l.abs() < 1e-9)));
    }

    #[test]
    fn ndob_tracks_constant_load() {
        let mut s = quiet(SimScenario::exo_elastic());
        s.disturbance = vec![
            vec![DisturbanceProfile::Constant { value: 5.0, noise_std: 0.0 }],
            vec![DisturbanceProfile::Constant { value: -2.0, noise_std: 0.0 }],
        ];
        s.horizon = 1000;
        s.window = [0, 10];
        let tr = run_with_observer(&s, &ObserverSpec::Ndob { c: 50.0 }, 3).unwrap();
        let last = tr.records.last().unwrap();
        assert!((last.d_hat[0] - 5.0).abs() < 1e-3 && (last.d_hat[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn errors_carry_the_step() {
        let mut s = SimScenario::exo_elastic();
        s.horizon = 50;
        s.window = [0, 10];
        s.disturbance[0] = vec![DisturbanceProfile::ImpulseTrain {
            magnitude: 1e300,
            width: 5,
            period: 100,
            start: 10,
            noise_std: 0.0,
        }];
        let err = run_with_observer(&s, &ObserverSpec::Ekf { eta: 1.0 }, 1).unwrap_err();
        assert!(matches!(err, DobError::AtStep { step: 10..=12, .. }), "{err}");
    }
}
