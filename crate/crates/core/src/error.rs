use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic bytes {found:?} (expected \"ANOF\")")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("non-finite scalar at flat index {index}")]
    NonFiniteScalar { index: usize },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reference pool is empty")]
    EmptyPool,
    #[error("empty input")]
    EmptyInput,
    #[error("inconsistent neighbor assignment: {0}")]
    InconsistentAssignment(String),
    #[error("anchor weight must be strictly positive, found {value} at query {index}")]
    NonPositiveLambda { index: usize, value: f64 },
    #[error("pool has {available} rows, need at least {required}")]
    PoolTooSmall { required: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("only one class present; metric undefined")]
    SingleClass,
    #[error("no positive (anomalous) samples")]
    NoPositives,
    #[error("no anomalous pixels in any mask")]
    NoAnomalousPixels,
    #[error("mask value {0} is not 0 or 1")]
    InvalidMaskValue(u8),
    #[error("mask missing for image {0}")]
    MissingMask(String),
    #[error("no views to aggregate")]
    NoViews,
    #[error("linear system is singular")]
    SingularSystem,
}

impl Error {
    /// Stable identifier used in machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "BadMagic",
            Error::VersionUnsupported(_) => "VersionUnsupported",
            Error::UnknownDtype(_) => "UnknownDtype",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::TrailingBytes { .. } => "TrailingBytes",
            Error::NonFiniteScalar { .. } => "NonFiniteScalar",
            Error::IoFailure { .. } => "IoFailure",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyPool => "EmptyPool",
            Error::EmptyInput => "EmptyInput",
            Error::InconsistentAssignment(_) => "InconsistentAssignment",
            Error::NonPositiveLambda { .. } => "NonPositiveLambda",
            Error::PoolTooSmall { .. } => "PoolTooSmall",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::SingleClass => "SingleClass",
            Error::NoPositives => "NoPositives",
            Error::NoAnomalousPixels => "NoAnomalousPixels",
            Error::InvalidMaskValue(_) => "InvalidMaskValue",
            Error::MissingMask(_) => "MissingMask",
            Error::NoViews => "NoViews",
            Error::SingularSystem => "SingularSystem",
        }
    }

    /// Errors caused by violated internal invariants rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::SingularSystem | Error::InconsistentAssignment(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
