//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("registry error: {0}")]
    Registry(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("infeasible assignment: {0} ground truths but only {1} queries")]
    Infeasible(usize, usize),

    #[error("provider error after {retries} retries: {msg}")]
    Provider { msg: String, retries: usize },

    #[error("retrieval error after {retries} retries: {msg}")]
    Retrieval { msg: String, retries: usize },

    #[error("fixture backend has no entry for key: {0}")]
    MissingFixture(String),

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error("missing knowledge descriptions for hoi ids {0:?}")]
    MissingDescriptions(Vec<usize>),

    #[error("text encoding error: {0}")]
    Encoding(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config digest mismatch: checkpoint was trained with a different model configuration")]
    ConfigDigestMismatch,

    #[error("split digest mismatch: checkpoint split {checkpoint:?} does not match requested split {requested}")]
    SplitDigestMismatch {
        checkpoint: Option<String>,
        requested: String,
    },

    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 2 config, 3 data, 4 provider/backend, 5 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigDigestMismatch => 2,
            Error::Parse { .. }
            | Error::Registry(_)
            | Error::InvalidSpec(_)
            | Error::Range(_)
            | Error::SplitDigestMismatch { .. }
            | Error::Checksum(_)
            | Error::MissingDescriptions(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::Provider { .. }
            | Error::Retrieval { .. }
            | Error::MissingFixture(_)
            | Error::Encoding(_) => 4,
            Error::Divergence { .. } => 5,
            _ => 1,
        }
    }
}
