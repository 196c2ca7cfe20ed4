use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced to the shell, each mapped to a fixed exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Library(#[from] twinbeam::Error),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad input, 3 for I/O, 4 for numerical breakdown.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Library(twinbeam::Error::Io(_)) => 3,
            CliError::Library(e) if e.is_numerical() => 4,
            CliError::Library(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
