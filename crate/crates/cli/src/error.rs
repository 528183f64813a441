use std::process::ExitCode;

use thiserror::Error;

/// Failures of a command, each mapped to a distinct process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config invalid: {0}")]
    ConfigInvalid(String),

    #[error("dataset missing: {0}")]
    DatasetMissing(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("acceptance failure: {0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::ConfigInvalid(_) => 2,
            Self::DatasetMissing(_) | Self::Data(_) => 3,
            Self::NumericalFailure(_) => 4,
            Self::Acceptance(_) => 5,
        })
    }
}

impl From<featlab::Error> for CliError {
    fn from(e: featlab::Error) -> Self {
        use featlab::Error as E;
        match e {
            E::BadMagic { .. }
            | E::TruncatedFile(_)
            | E::CountMismatch(_)
            | E::BadLabel { .. }
            | E::UnsupportedFormat(_)
            | E::Io(_) => Self::Data(e.to_string()),
            E::InvalidArgument(_) => Self::ConfigInvalid(e.to_string()),
            other => Self::NumericalFailure(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
