use std::path::Path;

use serde::{Deserialize, Serialize};

use super::disturbance::DisturbanceProfile;
use crate::control::{DesiredTraj, PdGains};
use crate::dynamics::{JointVec, OneDofParams, StribeckParams, TwoLinkParams};
use crate::error::{DobError, Result};
use crate::observers::{Bandwidth, DEFAULT_NDOB_GAIN};

/// Version of the scenario and report file layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PlantSpec {
    OneDof {
        #[serde(default)]
        params: OneDofParams,
    },
    Exo {
        #[serde(default = "TwoLinkParams::exo_left_leg")]
        params: TwoLinkParams,
    },
}

impl PlantSpec {
    pub fn joints(&self) -> usize {
        match self {
            Self::OneDof { .. } => 1,
            Self::Exo { .. } => 2,
        }
    }

    /// Length of the augmented state.
    pub fn state_dim(&self) -> usize {
        3 * self.joints()
    }

    pub fn measurement_dim(&self) -> usize {
        match self {
            Self::OneDof { .. } => 1,
            Self::Exo { .. } => 4,
        }
    }
}

/// `θ_d,j(t) = offset_j + amplitude_j sin(2π f t + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub amplitude: Vec<f64>,
    /// Hz.
    pub frequency: f64,
    #[serde(default)]
    pub offset: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
}

impl TrajectorySpec {
    pub fn angle(&self, joint: usize, t: f64) -> f64 {
        let offset = self.offset.get(joint).copied().unwrap_or(0.0);
        offset + self.amplitude[joint] * (std::f64::consts::TAU * self.frequency * t + self.phase).sin()
    }

    /// Desired angles, rates and accelerations for steps `0..len`.
    ///
    /// Rates and accelerations are forward differences of the sampled angle,
    /// so an Euler-discretized plant driven by exact feedforward reproduces
    /// the samples exactly.
    pub fn sample(&self, joints: usize, dt: f64, len: usize) -> Vec<Vec<DesiredTraj<f64>>> {
        (0..joints)
            .map(|j| {
                let theta: Vec<f64> = (0..len + 2).map(|k| self.angle(j, k as f64 * dt)).collect();
                let rate: Vec<f64> = theta.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
                (0..len)
                    .map(|k| DesiredTraj {
                        theta: theta[k],
                        thetadot: rate[k],
                        thetaddot: (rate[k + 1] - rate[k]) / dt,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Joins per-joint desired samples of a two-joint plant.
pub fn joint_desired(per_joint: &[Vec<DesiredTraj<f64>>], k: usize) -> DesiredTraj<JointVec> {
    let (a, b) = (per_joint[0][k], per_joint[1][k]);
    DesiredTraj {
        theta: JointVec::new(a.theta, b.theta),
        thetadot: JointVec::new(a.thetadot, b.thetadot),
        thetaddot: JointVec::new(a.thetaddot, b.thetaddot),
    }
}

/// Diagonal covariances shared by the Kalman-type observers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub q_d: Vec<f64>,
    pub q_s: Vec<f64>,
    pub r: Vec<f64>,
    /// Initial estimate covariance, augmented-state order.
    pub p0: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_eps_fp() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    20
}

fn default_ndob_gain() -> f64 {
    DEFAULT_NDOB_GAIN
}

/// Which observer closes the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObserverSpec {
    Ekf {
        #[serde(default = "one")]
        eta: f64,
    },
    /// Bank of EKFs whose disturbance covariances are `etas[j] · Q_d`.
    Imm {
        etas: Vec<f64>,
        markov: Vec<Vec<f64>>,
        #[serde(default)]
        mu0: Option<Vec<f64>>,
    },
    Mkc {
        #[serde(default = "one")]
        eta: f64,
        sigma_d: Vec<Bandwidth>,
        #[serde(default)]
        sigma_s: Option<Vec<Bandwidth>>,
        #[serde(default)]
        sigma_r: Option<Vec<Bandwidth>>,
        #[serde(default = "default_eps_fp")]
        eps_fp: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    /// Nonlinear observer of the two-link leg, fed with measured angles and rates.
    Ndob {
        #[serde(default = "default_ndob_gain")]
        c: f64,
    },
    /// No compensation: measured angle, differenced rate, `d̂ = 0`.
    None,
    /// Estimates pinned to the true state and disturbance.
    Oracle,
}

impl ObserverSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Ekf { eta } => format!("EKF-DOB eta={}", fmt_eta(*eta)),
            Self::Imm { etas, markov, .. } => {
                let e: Vec<String> = etas.iter().map(|e| fmt_eta(*e)).collect();
                let diag: Vec<String> = (0..markov.len()).map(|i| format!("{}", markov[i][i])).collect();
                format!("IMMEKF-DOB etas=[{}] p=[{}]", e.join(","), diag.join(","))
            }
            Self::Mkc { eta, sigma_d, .. } => {
                let s: Vec<String> = sigma_d.iter().map(|s| s.to_string()).collect();
                format!("MKCEKF-DOB eta={} sigma_d=[{}]", fmt_eta(*eta), s.join(","))
            }
            Self::Ndob { c } => format!("NDOB c={c}"),
            Self::None => "none".into(),
            Self::Oracle => "oracle".into(),
        }
    }

    pub fn is_kalman(&self) -> bool {
        matches!(self, Self::Ekf { .. } | Self::Imm { .. } | Self::Mkc { .. })
    }
}

/// `e^n` for integer exponents, the plain value otherwise.
pub fn fmt_eta(eta: f64) -> String {
    let n = eta.ln();
    if (n - n.round()).abs() < 1e-9 {
        format!("e^{}", n.round() as i64)
    } else {
        format!("{eta}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Euler,
    /// Two-link truth only.
    Rk4,
}

/// Which joint rate the disturbance profiles see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateSource {
    /// The true plant rate; rate-dependent disturbances then feed back into the loop.
    #[default]
    True,
    /// The reference rate, which makes the disturbance an exogenous signal.
    Desired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSpec {
    /// Fraction of the Nyquist frequency.
    pub cutoff: f64,
    pub order: usize,
}

impl Default for SnrSpec {
    fn default() -> Self {
        Self { cutoff: 0.2, order: 12 }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_bound_eps() -> f64 {
    0.01
}

/// A closed-loop simulation: plant, reference, controller, observers and
/// the true disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    pub plant: PlantSpec,
    /// Sampling interval (s).
    pub dt: f64,
    pub horizon: usize,
    pub trajectory: TrajectorySpec,
    pub gains: PdGains,
    pub filter: FilterSpec,
    /// `run` and `mc` use the first entry; `compare` uses all of them.
    pub observers: Vec<ObserverSpec>,
    /// Per joint, a list of profiles that are summed.
    pub disturbance: Vec<Vec<DisturbanceProfile>>,
    #[serde(default)]
    pub disturbance_rate: RateSource,
    /// Standard deviation of the measurement noise; defaults to `sqrt(R)`.
    #[serde(default)]
    pub measurement_std: Option<Vec<f64>>,
    pub seed: u64,
    /// Inclusive step window for the bias and variance averages.
    pub window: [usize; 2],
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub torque_limit: Option<f64>,
    #[serde(default)]
    pub snr: SnrSpec,
    /// Record wall-clock step times. Off by default because timings are not reproducible.
    #[serde(default)]
    pub timing: bool,
    /// Cross-term weight used for the reported ultimate bound.
    #[serde(default = "default_bound_eps")]
    pub bound_eps: f64,
}

impl SimScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn joints(&self) -> usize {
        self.plant.joints()
    }

    pub fn measurement_std(&self) -> Vec<f64> {
        self.measurement_std
            .clone()
            .unwrap_or_else(|| self.filter.r.iter().map(|r| r.sqrt()).collect())
    }

    pub fn with_observers(&self, observers: Vec<ObserverSpec>) -> Self {
        Self { observers, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(DobError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return cfg(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return cfg(format!("dt must be positive, got {}", self.dt));
        }
        if self.horizon < 1 {
            return cfg("horizon must be at least 1".into());
        }
        match &self.plant {
            PlantSpec::OneDof { params } => params.validate()?,
            PlantSpec::Exo { params } => {
                params.validate()?;
                params.check_admissible(64)?;
            }
        }
        let n = self.joints();
        let m = self.plant.measurement_dim();
        let t = &self.trajectory;
        if t.amplitude.len() != n || !(t.offset.is_empty() || t.offset.len() == n) {
            return cfg(format!("trajectory needs {n} amplitude (and offset) entries"));
        }
        if !t.frequency.is_finite() || !t.phase.is_finite() || t.amplitude.iter().chain(&t.offset).any(|v| !v.is_finite()) {
            return cfg("trajectory parameters must be finite".into());
        }
        self.gains.validate()?;
        if self.gains.joints() != n {
            return cfg(format!("gains need {n} entries per matrix"));
        }
        let f = &self.filter;
        if f.q_d.len() != n || f.q_s.len() != 2 * n || f.r.len() != m || f.p0.len() != 3 * n {
            return cfg(format!(
                "filter sizes must be q_d={n}, q_s={}, r={m}, p0={}",
                2 * n,
                3 * n
            ));
        }
        if f.q_d.iter().chain(&f.q_s).chain(&f.p0).any(|v| !(*v >= 0.0) || !v.is_finite())
            || f.r.iter().any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return cfg("filter covariances must be finite, non-negative, and R positive".into());
        }
        if let Some(ms) = &self.measurement_std {
            if ms.len() != m || ms.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return cfg(format!("measurement_std needs {m} non-negative entries"));
            }
        }
        if self.observers.is_empty() {
            return cfg("at least one observer is required".into());
        }
        for o in &self.observers {
            self.validate_observer(o)?;
        }
        if self.disturbance.len() != n {
            return cfg(format!("disturbance needs one profile list per joint ({n})"));
        }
        for p in self.disturbance.iter().flatten() {
            p.validate()?;
        }
        if self.window[0] > self.window[1] || self.window[1] >= self.horizon {
            return cfg(format!(
                "window [{}, {}] must be ordered and inside the horizon {}",
                self.window[0], self.window[1], self.horizon
            ));
        }
        if self.burn_in >= self.horizon {
            return cfg("burn_in must be shorter than the horizon".into());
        }
        if let Some(l) = self.torque_limit {
            if !(l > 0.0) {
                return cfg("torque_limit must be positive".into());
            }
        }
        if !(self.snr.cutoff > 0.0 && self.snr.cutoff < 1.0) || self.snr.order == 0 {
            return cfg("snr cutoff must lie in (0, 1) and order be positive".into());
        }
        if !(self.bound_eps > 0.0) {
            return cfg("bound_eps must be positive".into());
        }
        if self.integrator == Integrator::Rk4 && n == 1 {
            return cfg("rk4 truth is only available for the two-link plant".into());
        }
        Ok(())
    }

    pub fn validate_observer(&self, o: &ObserverSpec) -> Result<()> {
        let n = self.joints();
        let m = self.plant.measurement_dim();
        let bad = |msg: String| Err(DobError::Config(format!("{}: {msg}", o.label())));
        match o {
            ObserverSpec::Ekf { eta } => {
                if !(*eta >= 1.0) || !eta.is_finite() {
                    return bad("eta must be finite and ≥ 1".into());
                }
            }
            ObserverSpec::Imm { etas, markov, mu0 } => {
                if etas.is_empty() || etas.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                    return bad("etas must be positive".into());
                }
                if markov.len() != etas.len() || markov.iter().any(|r| r.len() != etas.len()) {
                    return bad("markov must be square with one row per model".into());
                }
                if let Some(mu) = mu0 {
                    if mu.len() != etas.len() {
                        return bad("mu0 needs one entry per model".into());
                    }
                }
            }
            ObserverSpec::Mkc { eta, sigma_d, sigma_s, sigma_r, eps_fp, max_iter } => {
                if !(*eta >= 1.0) || !eta.is_finite() {
                    return bad("eta must be finite and ≥ 1".into());
                }
                if sigma_d.len() != n || sigma_d.iter().any(|s| !s.is_valid()) {
                    return bad(format!("sigma_d needs {n} positive or infinite entries"));
                }
                if sigma_s.as_ref().is_some_and(|s| s.len() != 2 * n) {
                    return bad(format!("sigma_s needs {} entries", 2 * n));
                }
                if sigma_r.as_ref().is_some_and(|s| s.len() != m) {
                    return bad(format!("sigma_r needs {m} entries"));
                }
                if !(*eps_fp > 0.0) || *max_iter < 1 {
                    return bad("eps_fp must be positive and max_iter ≥ 1".into());
                }
            }
            ObserverSpec::Ndob { c } => {
                if n != 2 {
                    return bad("NDOB is only defined for the two-link plant".into());
                }
                if !(*c > 0.0) || !c.is_finite() {
                    return bad("gain must be positive".into());
                }
            }
            ObserverSpec::None | ObserverSpec::Oracle => {}
        }
        Ok(())
    }

    /// 1-DOF manipulator tracking `10 sin(0.4π k T)` against Coulomb and
    /// viscous friction, with the EKF, IMM and MKC configurations of the
    /// observer comparison. The friction is driven by the desired rate.
    pub fn one_dof_friction() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "one-dof-friction".into(),
            plant: PlantSpec::OneDof { params: OneDofParams::default() },
            dt: 0.01,
            horizon: 1000,
            trajectory: TrajectorySpec { amplitude: vec![10.0], frequency: 0.2, offset: vec![], phase: 0.0 },
            gains: PdGains { kp: vec![25.0], kd: vec![5.0] },
            filter: FilterSpec { q_d: vec![0.25], q_s: vec![1e-6, 1e-6], r: vec![1e-4], p0: vec![1.0, 1e-4, 1e-4] },
            observers: paper_observer_set(),
            disturbance: vec![vec![DisturbanceProfile::paper_friction()]],
            disturbance_rate: RateSource::Desired,
            measurement_std: None,
            seed: 2024,
            window: [300, 450],
            burn_in: 0,
            integrator: Integrator::Euler,
            torque_limit: None,
            snr: SnrSpec::default(),
            timing: false,
            bound_eps: 0.01,
        }
    }

    /// Two-link leg swinging at gait frequency against joint friction and an
    /// elastic band whose pull saturates near a 5 kg load.
    pub fn exo_elastic() -> Self {
        let band = |amplitude: f64, cap: f64, phase: f64| DisturbanceProfile::ElasticPeriodic {
            amplitude,
            frequency: 0.5,
            phase,
            cap,
            noise_std: 0.5,
        };
        let friction = |params: StribeckParams| DisturbanceProfile::Stribeck { params, scale: -1.0, noise_std: 0.0 };
        Self {
            schema_version: SCHEMA_VERSION,
            name: "exo-elastic".into(),
            plant: PlantSpec::Exo { params: TwoLinkParams::exo_left_leg() },
            dt: 1e-3,
            horizon: 4000,
            trajectory: TrajectorySpec {
                amplitude: vec![0.35, 0.5],
                frequency: 0.5,
                offset: vec![0.1, -0.5],
                phase: 0.0,
            },
            gains: PdGains::exo_default(),
            filter: FilterSpec {
                q_d: vec![1.0, 1.0],
                q_s: vec![1e-8, 1e-8, 1e-6, 1e-6],
                r: vec![1e-6, 1e-6, 1e-4, 1e-4],
                p0: vec![1.0, 1.0, 1e-6, 1e-6, 1e-4, 1e-4],
            },
            observers: vec![
                ObserverSpec::Imm { etas: vec![1.0, 20.0], markov: symmetric_markov(0.95), mu0: None },
                ObserverSpec::Ekf { eta: 1.0 },
            ],
            disturbance: vec![
                vec![friction(StribeckParams::exo_hip()), band(30.0, 5.0 * 9.81 * 0.4, 0.0)],
                vec![friction(StribeckParams::exo_knee()), band(12.0, 5.0 * 9.81 * 0.2, 0.5)],
            ],
            disturbance_rate: RateSource::True,
            measurement_std: None,
            seed: 7,
            window: [1000, 1500],
            burn_in: 0,
            integrator: Integrator::Euler,
            torque_limit: None,
            snr: SnrSpec::default(),
            timing: false,
            bound_eps: 0.01,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "one-dof-friction" => Some(Self::one_dof_friction()),
            "exo-elastic" => Some(Self::exo_elastic()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 2] = ["one-dof-friction", "exo-elastic"];
}

/// `[[p, 1−p], [1−p, p]]`.
pub fn symmetric_markov(p: f64) -> Vec<Vec<f64>> {
    vec![vec![p, 1.0 - p], vec![1.0 - p, p]]
}

/// EKF over `η ∈ {e⁰, …, e⁴, e⁴⁰}`, the two-model IMM and the MKC filter.
pub fn paper_observer_set() -> Vec<ObserverSpec> {
    let mut v: Vec<ObserverSpec> = paper_eta_grid().into_iter().map(|eta| ObserverSpec::Ekf { eta }).collect();
    v.push(paper_imm());
    v.push(paper_mkc());
    v
}

pub fn paper_eta_grid() -> Vec<f64> {
    [0.0, 1.0, 2.0, 3.0, 4.0, 40.0].iter().map(|e: &f64| e.exp()).collect()
}

pub fn paper_imm() -> ObserverSpec {
    ObserverSpec::Imm {
        etas: vec![1.0, 4f64.exp()],
        markov: vec![vec![0.95, 0.05], vec![0.3, 0.7]],
        mu0: None,
    }
}

pub fn paper_mkc() -> ObserverSpec {
    ObserverSpec::Mkc {
        eta: 1.0,
        sigma_d: vec![Bandwidth::Finite(1.5)],
        sigma_s: None,
        sigma_r: None,
        eps_fp: 1e-6,
        max_iter: 20,
    }
}
