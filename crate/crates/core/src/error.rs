//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the surface-model pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("scale code must be strictly positive, got ({0}, {1}, {2})")]
    InvalidScale(f64, f64, f64),

    #[error("transform is singular and cannot be inverted")]
    SingularTransform,

    #[error("expected a unit-scale transform: {0}")]
    NonUnitScale(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("point cloud is empty")]
    EmptyPointCloud,

    #[error("point set has zero extent along every axis")]
    DegeneratePointSet,

    #[error("mesh is degenerate: {0}")]
    DegenerateMesh(String),

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("mesh generation failed: {0}")]
    MeshGeneration(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("empty level set: the field has no zero crossing")]
    EmptyLevelSet,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
