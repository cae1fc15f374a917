use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("axis {axis} is out of range for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },

    #[error("shape {shape:?} has a zero extent")]
    ZeroExtent { shape: Vec<usize> },

    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {message}")]
    Domain { op: &'static str, message: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },

    #[error("tensor is not attached to a tape")]
    DetachedTensor,

    #[error("parameter {0:?} registered twice on one tape")]
    DuplicateParameter(String),
}

impl TensorError {
    pub fn domain(op: &'static str, message: impl Into<String>) -> Self {
        TensorError::Domain {
            op,
            message: message.into(),
        }
    }
}
