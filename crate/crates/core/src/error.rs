use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes, e.g. matmul inner extents disagreeing.
    #[error("dimension mismatch in {context}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Shape error localized to a specific model layer.
    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    /// Invalid argument values (negative lambda, empty data, label out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed model or dataset container.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Numerical failure (singular solve, non-finite loss, zero LRP denominator).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
