use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid drift: {0}")]
    InvalidDrift(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("invalid trace at line {line}: {msg}")]
    InvalidTrace { line: u64, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("policy contract violation: {0}")]
    PolicyContract(String),

    /// The exact search space is larger than the configured limit.
    #[error("search space of {count} allocations exceeds limit {limit}; use bfio-greedy")]
    CapacityExceeded { count: u128, limit: u128 },

    #[error("empty series")]
    EmptySeries,

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
