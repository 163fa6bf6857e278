use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("image of {height}x{width} is smaller than the {tiles_y}x{tiles_x} tile grid")]
    ImageTooSmall {
        height: usize,
        width: usize,
        tiles_y: usize,
        tiles_x: usize,
    },

    #[error("unsupported channel count {0}")]
    Channels(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("dataset layout: {0}")]
    Layout(String),

    #[error("split: {0}")]
    Split(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("training diverged at stage {stage} epoch {epoch} batch {batch} (lr {lr:e}): loss {loss}")]
    Diverged {
        stage: u8,
        epoch: usize,
        batch: usize,
        lr: f64,
        loss: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad input rather than a defect.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Contract(_) | Error::Diverged { .. })
    }
}
