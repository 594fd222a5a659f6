use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("unknown scheduler `{0}` (valid: random, rr, minrtt, nnpe, gpasp)")]
    UnknownScheduler(String),

    #[error("unknown congestion controller `{0}` (valid: phacc, phacc_no_gpasp, olia)")]
    UnknownController(String),

    #[error("arrival ranks are not a permutation of 1..={0}")]
    NotAPermutation(usize),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("response time must be positive, got {0}")]
    NonPositiveResponseTime(f64),

    #[error("non-finite loss during training step: {0}")]
    NonFiniteLoss(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
