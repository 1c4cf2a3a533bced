use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the NAC pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at row {row}, column {column} ({name}): {value:?} is not a finite number")]
    Parse {
        /// 1-based data row (the header is row 0).
        row: usize,
        /// 1-based column.
        column: usize,
        name: String,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("ensemble member {member} failed: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid pseudo-loss: {0}")]
    PseudoLoss(String),

    #[error("invalid calibration: {0}")]
    Calibration(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("undefined correlation: {0}")]
    Undefined(String),

    #[error("unsupported file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Parse { .. } => "parse",
            Error::Dataset(_) => "dataset",
            Error::Split(_) => "split",
            Error::Spec(_) => "spec",
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Diverged { .. } => "diverged",
            Error::Member { .. } => "ensemble_member",
            Error::PseudoLoss(_) => "pseudo_loss",
            Error::Calibration(_) => "calibration",
            Error::Invalid(_) => "invalid_argument",
            Error::Undefined(_) => "undefined_correlation",
            Error::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
