//! Error taxonomy shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Rejection sampling in scene generation gave up.
    #[error("scene generation failed after {attempts} attempts: {constraint}")]
    Generation { constraint: String, attempts: usize },

    /// No collision-free start/goal placement found.
    #[error("episode sampling failed after {attempts} attempts: {constraint}")]
    Sampling { constraint: String, attempts: usize },

    /// Action contained NaN or infinite components.
    #[error("invalid action: component {index} is {value}")]
    InvalidAction { index: usize, value: f64 },

    /// An API contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Tensor shapes did not line up.
    #[error("shape mismatch: expected {expected:?}, got {got:?} in {context}")]
    Shape {
        expected: Vec<usize>,
        got: Vec<usize>,
        context: String,
    },

    /// A binary artifact (dataset, checkpoint, manifest) failed validation.
    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// Configuration failed validation; every offending key is listed.
    #[error("invalid config: {}", keys.join("; "))]
    Config { keys: Vec<String> },

    /// A numeric argument left the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Expert unusable for data collection.
    #[error("collection error: {0}")]
    Collection(String),

    /// Training loss became non-finite.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from user-provided input (configs, files,
    /// CLI arguments) rather than an internal failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Format { .. } | Error::Io { .. } | Error::Domain(_)
        )
    }
}
