use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction and tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver diverged at iteration {iteration} (objective {objective:e})")]
    Diverged { iteration: usize, objective: f64 },

    #[error("degenerate blob: {0}")]
    DegenerateBlob(String),

    #[error("missing orientation data in trajectory {0}")]
    MissingOrientation(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("image error in {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
