//! CLI failure type carrying the process exit code.

use thiserror::Error;

/// What went wrong, bucketed by exit code: configuration, I/O and training
/// problems exit 1, failed verification suites exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Verification(_) => 2,
        }
    }
}

impl From<mcc::Error> for CliError {
    fn from(e: mcc::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
