use std::io;

/// Errors raised anywhere in the clustering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("record {record}: {message}")]
    Record { record: usize, message: String },

    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("autodiff: {0}")]
    Graph(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn format_err(kind: &'static str, message: impl Into<String>) -> Error {
    Error::Format {
        kind,
        message: message.into(),
    }
}
