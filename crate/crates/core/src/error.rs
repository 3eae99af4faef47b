use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("column {column} has no eligible entries")]
    DegenerateColumn { column: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("degenerate superposition span: t_r == t_b == {0}")]
    DegenerateSpan(usize),

    #[error("calibration produced a non-finite loss at {params}")]
    Calibration { params: String },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("invalid document: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
