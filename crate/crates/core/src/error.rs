use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid {nx}x{ny}: cell counts must be even and at least 4")]
    InvalidGrid { nx: usize, ny: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("energy positivity violated: {0}")]
    EnergyPositivity(String),

    #[error("solvability condition violated: {0}")]
    Solvability(String),

    #[error("height design failed: {0}")]
    Design(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("numerical abort: {0}")]
    NumericalAbort(String),

    #[error("missing data: {0}")]
    Data(String),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("parse error in `{key}`: {message}")]
    Parse { key: String, message: String },

    #[error("validation error in `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code category used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::InvalidGrid { .. }
            | Error::InvalidValue(_)
            | Error::GridMismatch(_) => 2,
            Error::Io { .. } | Error::Format(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
