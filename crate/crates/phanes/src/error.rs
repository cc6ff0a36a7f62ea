//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PhanesError>;

/// Errors surfaced by the library. The CLI maps these onto exit codes
/// (config 2, dependency 3, divergence 4).
#[derive(Debug, Error)]
pub enum PhanesError {
    /// Invalid input data (degenerate image, shape mismatch, bad mask, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage was run before the stages it depends on.
    #[error("missing dependency: {0}")]
    Dependency(String),

    /// Training or inference produced non-finite values.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// Checkpoint or artifact format problems.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PhanesError {
    /// Exit code contract used by the `phanes` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            PhanesError::Config(_) | PhanesError::InvalidInput(_) => 2,
            PhanesError::Dependency(_) => 3,
            PhanesError::Divergence(_) => 4,
            _ => 1,
        }
    }
}
