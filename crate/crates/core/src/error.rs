use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FlameError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FlameError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed landmark set: expected 28 points, got {0}")]
    Landmarks(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("image for record `{image_id}` could not be read: {msg}")]
    MissingImage { image_id: String, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("plot: {0}")]
    Plot(String),
}

impl FlameError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FlameError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        FlameError::Shape(msg.into())
    }

    /// Validation failures (bad config, bad arguments, malformed input files)
    /// as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            FlameError::Config(_) | FlameError::Parse { .. } | FlameError::Landmarks(_)
        )
    }
}
