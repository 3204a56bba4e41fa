use std::path::PathBuf;

use ctmap_core::ErrorKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ctmap_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad config {path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Numeric => 3,
                ErrorKind::Convergence => 4,
            },
            CliError::Io { .. } | CliError::Config { .. } | CliError::Invalid(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
