use std::process::ExitCode;

use thiserror::Error;

/// Failure classes mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed files, out-of-range values.
    #[error("{0}")]
    Input(String),
    /// The computation ran but cannot be trusted (optimizer failure).
    #[error("{0}")]
    Unreliable(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(2),
            CliError::Unreliable(_) => ExitCode::from(3),
        }
    }
}

impl From<uew_core::Error> for CliError {
    fn from(e: uew_core::Error) -> Self {
        match e {
            uew_core::Error::Unconverged(_) => CliError::Unreliable(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
