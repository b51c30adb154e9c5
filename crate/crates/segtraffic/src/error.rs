use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed or unsupported image/model file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Two grids/tensors that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A parameter violates its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Bad configuration file contents (unknown key, wrong type, bad JSON).
    #[error("config error: {0}")]
    Config(String),

    /// A JSON-lines record failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unreadable frame {0}")]
    UnreadableFrame(PathBuf),

    /// Training corpus produced no RoI labeled with a foreground class.
    #[error(
        "no positive RoIs: no proposal overlaps any ground-truth box at IoU >= 0.5; \
         lower det.min_area or check that ground truth matches the frames"
    )]
    NoPositiveRois,

    /// An input collection that must be non-empty is empty.
    #[error("empty input: {0}")]
    Empty(String),

    /// Gradients contained NaN or infinity; the update was rejected.
    #[error("non-finite gradient in {0}; step rejected")]
    NonFiniteGradient(String),
}

pub type Result<T> = std::result::Result<T, Error>;
