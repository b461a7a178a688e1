//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("degenerate mixture: {0}")]
    Degenerate(String),

    #[error("operator rows are not orthonormal; affine projection requires an orthonormalized operator")]
    NotOrthonormal,

    #[error("recovery diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {detail}")]
    Train {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("{}: format version {found} not supported (this build reads up to version {supported})", path.display())]
    Version {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("{}: checksum mismatch, file is corrupt or truncated", path.display())]
    Checksum { path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
