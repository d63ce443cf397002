use std::path::PathBuf;

/// Errors produced anywhere in the inference pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A denominator was zero.
    #[error("division error: {0}")]
    Division(String),

    /// A configuration field failed validation. `field` is a dotted path.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    /// A simulation inside a dataset run failed.
    #[error("simulation of record {index} failed: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// A non-finite value appeared inside a flow evaluation.
    #[error("non-finite value in transform {transform}: {message}")]
    NonFinite { transform: usize, message: String },

    /// Training diverged.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    /// Not enough data for the requested operation.
    #[error("insufficient data: {0}")]
    Insufficient(String),

    /// Two inputs had incompatible shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A file did not match the expected on-disk layout.
    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
