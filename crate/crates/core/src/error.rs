use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: no points")]
    EmptyCloud(String),

    #[error("degenerate cloud: all points identical")]
    DegenerateCloud,

    #[error("unknown shape kind `{0}`")]
    UnknownShape(String),

    #[error("manifest row references missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("duplicate cloud path {} in manifest", .0.display())]
    DuplicatePath(PathBuf),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("walk longer than cloud: cloud `{cloud_id}` has {points} points, walk length {length}")]
    WalkTooLong {
        cloud_id: String,
        length: usize,
        points: usize,
    },

    #[error("k = {k} exceeds n - 1 = {}", .points.saturating_sub(1))]
    TooManyNeighbors { k: usize, points: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("class {0} has no labelled instances")]
    ClassAbsent(usize),

    #[error("degenerate training stats: need both correct and incorrect shapes")]
    DegenerateStats,

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid config: {0}")]
    ConfigValue(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Coarse grouping used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::ConfigValue(_) | Error::InvalidParam(_) => {
                ErrorClass::Usage
            }
            Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
