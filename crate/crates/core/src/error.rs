use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("sequence length mismatch: {0}")]
    SequenceLength(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("rank-deficient regressors: {0}")]
    RankDeficient(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("network too large for gradient check: {params} parameters (limit {limit})")]
    TooLarge { params: usize, limit: usize },
    #[error("frozen emulator violated: digest changed from {before} to {after}")]
    FrozenEmulator { before: String, after: String },
    #[error("checkpoint digest mismatch: stored {stored}, computed {computed}")]
    DigestMismatch { stored: String, computed: String },
    #[error("malformed checkpoint at line {line}: {reason}")]
    MalformedCheckpoint { line: usize, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("duplicate metrics key: {0}")]
    DuplicateMetric(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable name of the variant, used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::SequenceLength(_) => "sequence_length",
            Error::Singular(_) => "singular",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::TooLarge { .. } => "too_large",
            Error::FrozenEmulator { .. } => "frozen_emulator",
            Error::DigestMismatch { .. } => "digest_mismatch",
            Error::MalformedCheckpoint { .. } => "malformed_checkpoint",
            Error::Config(_) => "config",
            Error::DuplicateMetric(_) => "duplicate_metric",
            Error::Io { .. } => "io",
        }
    }
}
