use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor shape {shape:?} holds {expected} values but {actual} were given")]
    TensorLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("tensor contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("layer {layer}: expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("layer {layer}: {message}")]
    InvalidLayer { layer: usize, message: String },

    #[error("output dimension would be {0} < 1 (input {1}, padding {2}, kernel {3}, stride {4})")]
    Dimension(i64, usize, usize, usize, usize),

    #[error("model has no weighted layer")]
    NoWeightedLayer,

    #[error("layer {0} is not a weighted layer")]
    NotWeighted(usize),

    #[error("mask for layer {layer} has shape {actual:?}, weight shape is {expected:?}")]
    MaskShape {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid pruning settings: {}", format_fields(.0))]
    InvalidSettings(Vec<FieldError>),

    #[error("invalid mask edit #{index}: {message}")]
    InvalidEdit { index: usize, message: String },

    #[error("unknown step {0}")]
    UnknownStep(u64),

    #[error("the baseline step cannot be removed")]
    RemoveBaseline,

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("report mismatch: {0}")]
    ReportMismatch(String),

    #[error("archive {path}: {message}")]
    Archive { path: PathBuf, message: String },

    #[error("fixture generation failed: {0}")]
    Fixture(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// One rejected field of a settings or edit payload.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

fn format_fields(fields: &[FieldError]) -> String {
    fields
        .iter()
        .map(|f| format!("{}: {}", f.field, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn archive(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Archive {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in reading or validating archives on disk.
    pub fn is_archive_error(&self) -> bool {
        matches!(
            self,
            Error::Archive { .. } | Error::Io { .. } | Error::Json { .. }
        )
    }
}
