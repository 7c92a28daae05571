use thiserror::Error;

/// Errors raised by the dynamics, observers and simulation lab.
#[derive(Debug, Error)]
pub enum DobError {
    /// Mass matrix too ill-conditioned: the parameters left the admissible set.
    #[error("mass matrix is singular or ill-conditioned (condition number {cond:.3e})")]
    SingularMass { cond: f64 },

    #[error("non-finite value while evaluating {context}")]
    NonFinite { context: &'static str },

    #[error("innovation covariance is numerically singular")]
    InnovationSingular,

    /// Cholesky factorisation failed; usually a covariance collapse upstream.
    #[error("matrix is not positive definite ({context})")]
    NotPd { context: &'static str },

    #[error("series too short: {len} samples, need more than {min}")]
    TooShort { len: usize, min: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<DobError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DobError {
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ DobError::AtStep { .. } => e,
            e => DobError::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// True for configuration problems (as opposed to numerical failures).
    pub fn is_config(&self) -> bool {
        matches!(self, DobError::Config(_) | DobError::Json(_) | DobError::Dimension(_))
    }
}

pub type Result<T, E = DobError> = std::result::Result<T, E>;
