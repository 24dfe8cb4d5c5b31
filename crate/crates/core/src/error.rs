//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (shapes, grids, split sizes, flags).
    #[error("configuration error: {0}")]
    Config(String),

    /// Sample generation failed; names the seed so the case can be replayed.
    #[error("generation error (seed {seed:#018x}): {msg}")]
    Generation { seed: u64, msg: String },

    /// Tensor or layer shapes do not compose.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// NaN/Inf detected in a numeric pipeline; names the offending stage.
    #[error("numeric error in {0}")]
    Numeric(String),

    /// Training diverged.
    #[error("training error at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    /// Malformed file (tensor container, checkpoint, config, archive).
    #[error("format error: {0}")]
    Format(String),

    /// Evaluation protocol violated (e.g. empty ground truth, missing class).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A pipeline stage cannot run or failed; names the stage.
    #[error("stage '{stage}' failed: {msg}")]
    Stage { stage: String, msg: String },

    /// Method/architecture combination not supported.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub fn stage(stage: &str, msg: impl Into<String>) -> Self {
        Error::Stage { stage: stage.to_string(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
