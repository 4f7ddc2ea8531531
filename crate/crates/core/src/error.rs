//! Error types shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong while fitting, probing or reading dumps.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:e} below -{tolerance:e}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate labels: {0}")]
    SingleClass(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("train/test leakage: {0}")]
    DataLeak(String),

    #[error("label misalignment: {0}")]
    LabelMisalignment(String),

    #[error("layer stack is not deterministic: utterance {utterance} differs between replays at layer {layer}")]
    NonDeterministic { utterance: String, layer: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Binary-format failures. Each kind is distinct so callers can tell a
/// truncated download from a corrupted header.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("non-finite float in utterance {utterance:?} (layer {layer}, frame {frame}, dim {dim})")]
    NonFiniteFrame {
        utterance: String,
        layer: u32,
        frame: usize,
        dim: usize,
    },

    #[error("record count mismatch: header declares {declared}, file holds {found}")]
    CountMismatch { declared: u64, found: u64 },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("trailing bytes after last record")]
    TrailingBytes,
}
