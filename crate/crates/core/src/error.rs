use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid prediction matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pool has {pool} members but {requested} were requested without replacement")]
    PoolTooSmall { pool: usize, requested: usize },

    #[error("exhaustive selection over C({pool}, {size}) = {count} subsets exceeds the guard of {limit}")]
    GuardExceeded { pool: usize, size: usize, count: u128, limit: u128 },

    #[error("invalid genome `{genome}`: {reason}")]
    InvalidGenome { genome: String, reason: String },

    #[error("evaluation of `{genome}` (seed {seed}) failed: {reason}")]
    Evaluation { genome: String, seed: u64, reason: String },

    #[error("training diverged at epoch {epoch} (loss {loss}); config: {config}")]
    Divergence { epoch: usize, loss: f64, config: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("duplicate store key {0}")]
    DuplicateKey(String),

    #[error("missing store key {0}")]
    MissingKey(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    ChecksumMismatch { path: PathBuf, expected: String, found: String },

    #[error("malformed store data: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the error stems from user configuration rather than data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidArgument(_) | Error::PoolTooSmall { .. } | Error::GuardExceeded { .. }
        )
    }
}
