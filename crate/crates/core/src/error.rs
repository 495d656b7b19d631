use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the MVPLN library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("line {line}, column {column}: {kind} count {value:?}")]
    InvalidCount {
        line: usize,
        column: usize,
        kind: CountErrorKind,
        value: String,
    },

    #[error("duplicate unit id {0:?}")]
    DuplicateUnit(String),

    #[error("sample column {0} has no positive counts")]
    ZeroSample(usize),

    #[error("invalid library sizes: {0}")]
    InvalidLibrarySizes(String),

    #[error("{name} is not positive definite")]
    NotPositiveDefinite { name: String },

    #[error("{name} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { name: String, asymmetry: f64 },

    #[error("newton iteration for the posterior mode did not converge (gradient norm {grad_norm:e})")]
    NewtonFailed { grad_norm: f64 },

    #[error("sampler failure: acceptance rate {acceptance:.3} after adaptation")]
    SamplerFailure { acceptance: f64 },

    #[error("component {component} is degenerate (weight {weight:e})")]
    DegenerateComponent { component: usize, weight: f64 },

    #[error("no converged fits to select from")]
    NoConvergedFits,

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("poisson mean overflow: log-mean {0} exceeds 700")]
    PoissonOverflow(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Which rule a rejected count violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountErrorKind {
    Negative,
    Fractional,
    NonNumeric,
}

impl std::fmt::Display for CountErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CountErrorKind::Negative => "negative",
            CountErrorKind::Fractional => "fractional",
            CountErrorKind::NonNumeric => "non-numeric",
        })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
