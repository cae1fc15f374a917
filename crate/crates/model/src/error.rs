use micseg_core::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("extent {extent} not divisible by {multiple} ({context})")]
    Divisibility {
        extent: usize,
        multiple: usize,
        context: &'static str,
    },
    #[error("channels {channels} not divisible by head dimension {head_dim}")]
    HeadDivisibility { channels: usize, head_dim: usize },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("non-finite sampling coordinate at flat index {0}")]
    NonFiniteCoords(usize),
    #[error("depthwise kernel edge {0} must be odd")]
    EvenKernel(usize),
    #[error("kernel expects {expected} input channels, grid has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no parameter named '{0}' in the store")]
    MissingParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
