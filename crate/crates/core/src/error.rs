use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes or invalid hyperparameters. The message names the
    /// offending extent or field.
    #[error("configuration error: {0}")]
    Config(String),

    /// A ULSAM position string that is malformed or cannot be applied.
    #[error("invalid position directive `{directive}`: {reason}")]
    Directive { directive: String, reason: String },

    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// A dataset file ended in the middle of a record.
    #[error("ingestion error in {}: {detail} (byte offset {offset})", path.display())]
    Ingestion {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    /// Well-formed bytes carrying invalid values (e.g. a label out of range).
    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn directive(directive: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Directive {
            directive: directive.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
