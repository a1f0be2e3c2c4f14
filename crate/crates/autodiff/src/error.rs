use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid tensor shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("{op}: output extent would be non-positive ({detail})")]
    NonPositiveExtent { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("cross_entropy: target row {row} is not one-hot")]
    NotOneHot { row: usize },

    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("adam: {0}")]
    Optimizer(String),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail: detail.into() }
}
