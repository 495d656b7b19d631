use std::fmt;

use mvpln_core::error::Error;

/// Failure classes, one per process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Usage(String),
    /// Unreadable or malformed input, or unwritable output.
    Data(String),
    /// Every requested fit failed.
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Fit(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Fit(m) => write!(f, "fit failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownPreset(_) | Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            Error::NoConvergedFits
            | Error::NewtonFailed { .. }
            | Error::SamplerFailure { .. }
            | Error::DegenerateComponent { .. } => CliError::Fit(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
