use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("inconsistent hierarchy `{hierarchy}`: {message}")]
    Hierarchy { hierarchy: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("generalized item covers {0} leaves; at most 62 are supported")]
    Overflow(usize),

    #[error("dataset has {records} records, fewer than k = {k}")]
    TooFewRecords { records: usize, k: usize },

    #[error("cluster cannot be made k^m-anonymous: {0}")]
    Unsatisfiable(String),

    #[error("combination enumeration exceeded budget of {budget} checks")]
    BudgetExceeded { budget: u64 },

    #[error("no legitimate equivalence class for sample {0}")]
    NoMapping(u64),

    #[error("feature `{0}` is not part of the encoding schema")]
    UnknownFeature(String),

    #[error("model diverged (non-finite parameters) in round {round}")]
    Divergence { round: usize },

    #[error("parameter vectors differ in length ({expected} vs {found})")]
    LengthMismatch { expected: usize, found: usize },

    #[error("schema hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
