use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged in {stage} at epoch {epoch}, batch {batch}: objective = {value}")]
    Diverged {
        stage: String,
        epoch: usize,
        batch: usize,
        value: f64,
    },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{label}: {source}")]
    Point {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("model has no classification head")]
    MissingHead,

    #[error("model pathways have not been pretrained")]
    Untrained,

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::ShapeMismatch { op, left, right }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True when this error (or the error it wraps) is a training divergence.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Diverged { .. } => true,
            Error::Layer { source, .. } | Error::Point { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

/// Errors raised while reading or validating serialized artifacts.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated file: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checksum mismatch: header says {expected}, content hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error("malformed artifact: {0}")]
    Malformed(String),

    #[error("model fingerprint mismatch: codes were produced by {expected}, presented model is {actual}")]
    FingerprintMismatch { expected: String, actual: String },
}

/// Errors raised while loading or preparing datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("no participant files found in {0}")]
    EmptyDirectory(PathBuf),

    #[error("participant {participant}: {message}")]
    Parse {
        participant: String,
        message: String,
    },

    #[error("participant {participant}: shape mismatch: {message}")]
    Shape {
        participant: String,
        message: String,
    },

    #[error("participant {participant}, trial {trial}: rating {value} outside [1, 9]")]
    RatingOutOfRange {
        participant: String,
        trial: usize,
        value: f64,
    },

    #[error("{0}")]
    Invalid(String),
}
