use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive price {price} at step {step}")]
    NonPositivePrice { step: u64, price: f64 },

    #[error("market clearance failed at step {step}: {reason}")]
    SolverFailure { step: u64, reason: String },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("configuration parse error: {0}")]
    Parse(String),

    #[error("agent population is empty")]
    EmptyPopulation,

    #[error("invalid support [{low}, {high}]")]
    InvalidSupport { low: f64, high: f64 },

    #[error("singular denominator in first-order condition at gamma = {gamma}")]
    SingularDenominator { gamma: f64 },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("non-positive entry {0} in tail sample")]
    NonPositiveEntry(f64),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stamps the time step onto step-aware variants.
    pub fn at_step(self, k: u64) -> Self {
        match self {
            Error::NonPositivePrice { price, .. } => Error::NonPositivePrice { step: k, price },
            Error::SolverFailure { reason, .. } => Error::SolverFailure { step: k, reason },
            other => other,
        }
    }

    pub(crate) fn in_run(self, run: usize) -> Self {
        Error::Run {
            run,
            source: Box::new(self),
        }
    }
}
