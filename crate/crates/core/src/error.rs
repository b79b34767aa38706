use std::path::PathBuf;

use thiserror::Error;

use crate::volume::CoordSystem;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing metadata sidecar {0}")]
    MissingSidecar(PathBuf),
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("voxel spacing must be strictly positive and finite, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("non-finite intensity at linear index {0}")]
    NonFinite(usize),
    #[error("intensity {value} at linear index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("expected a {expected:?} volume, got {actual:?}")]
    CoordSystem {
        expected: CoordSystem,
        actual: CoordSystem,
    },
    #[error("window offset {offset} outside the valid range {min}..={max}")]
    OffsetOutOfRange { offset: usize, min: usize, max: usize },
    #[error("mask is empty")]
    EmptyMask,
    #[error("lumen mask fills the whole volume, so it has no boundary")]
    NoBoundary,
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
