use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad files, bad parameters, malformed configuration.
    Input,
    /// The data is valid but numerically degenerate (disconnected graph, zero rows, ...).
    Numeric,
    /// An iterative solver ran out of iterations.
    Convergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch at line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate rows {0} and {1} make the minimum pairwise distance zero")]
    DuplicateRows(usize, usize),

    #[error("graph is disconnected: component sizes {component_sizes:?}")]
    Disconnected { component_sizes: Vec<usize> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("eigensolver did not converge after {iterations} restarts (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no knee found in residual curve: {0}")]
    NoKnee(String),

    #[error("internal numerical inconsistency: {0}")]
    Inconsistent(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::MalformedHeader(_)
            | Error::DimensionMismatch { .. }
            | Error::NonFinite { .. }
            | Error::Parse { .. }
            | Error::InvalidParameter(_) => ErrorKind::Input,
            Error::DuplicateRows(..)
            | Error::Disconnected { .. }
            | Error::Degenerate(_)
            | Error::NoKnee(_)
            | Error::Inconsistent(_) => ErrorKind::Numeric,
            Error::NoConvergence { .. } => ErrorKind::Convergence,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
