use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("unknown label string {0:?}")]
    UnknownLabelString(String),
    #[error("event ends at or before its start ({start_ms} ms .. {end_ms} ms)")]
    NonMonotoneEvent { start_ms: f64, end_ms: f64 },
    #[error("event {end_ms} ms extends beyond recording duration {duration_ms} ms")]
    EventBeyondRecording { end_ms: f64, duration_ms: f64 },
    #[error("malformed annotation document: {0}")]
    MalformedAnnotation(String),
    #[error("malformed manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("invalid split ratio {0} (must be strictly between 0 and 1)")]
    InvalidRatio(f64),
    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("recording too short: {duration_s:.4} s < {required_s:.4} s")]
    TooShort { duration_s: f64, required_s: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class {0} has no training samples")]
    MissingClass(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("version mismatch or corrupt file: {0}")]
    VersionMismatch(String),
    #[error("{0} label passed to a {1} task")]
    LevelMismatch(&'static str, &'static str),
    #[error("index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("scalogram cache miss: {0}")]
    CacheMiss(PathBuf),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate numeric breakdown (NaN/Inf) rather than bad data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteGradient(_) | Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
