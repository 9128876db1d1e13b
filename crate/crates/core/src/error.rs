//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A spec or config field failed validation.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    /// Matrix/vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A requested window falls outside the dataset time range.
    #[error("window out of range: {0}")]
    WindowOutOfRange(String),

    /// Noise carries no variance where variance is required.
    #[error("degenerate noise: {0}")]
    DegenerateNoise(String),

    /// A kernel has zero trace on the training block.
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    /// A vector with zero norm was passed where a direction is needed.
    #[error("zero vector: {0}")]
    ZeroVector(String),

    /// On-disk data failed to parse or validate.
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    /// Grid summary requested on a grid with missing rows.
    #[error("incomplete grid, missing cells: {}", missing.join(", "))]
    IncompleteGrid { missing: Vec<String> },

    #[error("unknown metric: {0}")]
    UnknownMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: &str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn parse(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short stable token used in results CSV error_code fields.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "validation",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::WindowOutOfRange(_) => "window_out_of_range",
            Error::DegenerateNoise(_) => "degenerate_noise",
            Error::DegenerateKernel(_) => "degenerate_kernel",
            Error::ZeroVector(_) => "zero_vector",
            Error::Parse { .. } => "parse",
            Error::IncompleteGrid { .. } => "incomplete_grid",
            Error::UnknownMetric(_) => "unknown_metric",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
