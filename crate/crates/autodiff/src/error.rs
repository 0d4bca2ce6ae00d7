use thiserror::Error;

/// Errors raised by tape operations and the optimizer.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("backward already ran on this tape")]
    BackwardConsumed,
    #[error("gradients not populated; run backward first")]
    GradsMissing,
    #[error("mask selects no rows in {op}")]
    EmptyMask { op: &'static str },
    #[error("index {index} out of range for {len} rows in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("duplicate parameter '{0}'")]
    DuplicateParam(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
