use std::fmt;

use crate::tensor::Dims;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: Dims, actual: Dims },

    #[error("tensor data length {len} does not match dims {dims}")]
    DataLength { dims: Dims, len: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown tap `{tap}` (available: {})", available.join(", "))]
    UnknownTap { tap: String, available: Vec<String> },

    /// A metric whose value does not exist for the given inputs, such as a
    /// correlation against a constant sequence. Never reported as zero.
    #[error("undefined {metric}: {reason}")]
    Undefined { metric: &'static str, reason: Undefined },

    /// The performance bound only holds for margins above the mean error.
    #[error("bound invalid below C: margin t={t} must exceed C={c}")]
    BoundInvalid { t: f64, c: f64 },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a metric could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    ConstantInput,
    TooFewValues,
    ZeroError,
}

impl fmt::Display for Undefined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Undefined::ConstantInput => "constant input",
            Undefined::TooFewValues => "too few values",
            Undefined::ZeroError => "all-zero error map",
        })
    }
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn is_undefined(&self) -> bool {
        matches!(self, Error::Undefined { .. })
    }
}
