use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] micseg_core::TensorError),

    #[error(transparent)]
    Model(#[from] micseg_model::ModelError),

    #[error(transparent)]
    Data(#[from] micseg_data::DataError),

    #[error(transparent)]
    Metrics(#[from] micseg_metrics::MetricsError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("log record serialization: {0}")]
    Log(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no gradient for parameter '{0}'")]
    MissingGradient(String),

    #[error("unknown gradient-check case '{name}'; known: {known}")]
    UnknownCase { name: String, known: String },

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: u64, value: f64 },

    #[error("non-finite gradients at step {step}")]
    NonFiniteGradients { step: u64 },

    #[error("{0} split is empty")]
    EmptySplit(&'static str),
}

pub type Result<T> = std::result::Result<T, TrainError>;
