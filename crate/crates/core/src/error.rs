use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("missing column `{column}` in {path}")]
    Schema { column: String, path: String },

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("sample id {0} not found")]
    NotFound(u64),

    #[error("no counterfactual candidate: {0}")]
    NoCandidate(String),

    #[error("no negatively classified samples in the evaluation set")]
    EmptyCohort,

    #[error("protected group {0} has no negatively classified samples")]
    EmptyGroup(u8),

    #[error("exact Shapley enumeration limited to {max} players, got {got}")]
    OracleTooLarge { max: usize, got: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::OracleTooLarge { .. } => 2,
            _ => 3,
        }
    }

    /// True for errors that only mean "the value function is undefined on this model"
    /// (no negatives to explain), as opposed to genuine failures.
    pub fn is_empty_cohort(&self) -> bool {
        matches!(self, Error::EmptyCohort | Error::EmptyGroup(_))
    }
}
