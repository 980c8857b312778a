use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Layer or architecture parameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),
    /// Caller-supplied data that violates an operation's preconditions.
    #[error("input error: {0}")]
    Input(String),
    /// An API used out of order or with the wrong kind of value.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("incompatible {what} version {found} (expected {expected})")]
    Incompatible {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("ingestion error at row {row}: {msg}")]
    Ingestion { row: usize, msg: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("clustering degenerate after {attempts} attempts")]
    DegenerateClustering { attempts: usize },
    #[error("injected fault: {0}")]
    InjectedFault(String),
    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
