use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("backward called without a recorded forward pass: {0}")]
    NoGraph(String),

    #[error("function is not deterministic: {0}")]
    NonDeterministic(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("test data leaks into training: {0}")]
    Leakage(String),

    #[error("missing asset: {0}")]
    MissingAsset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}

pub(crate) use invalid;
pub(crate) use shape_err;
