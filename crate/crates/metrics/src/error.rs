use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("extent mismatch: prediction {0:?} vs reference {1:?}")]
    ExtentMismatch([usize; 3], [usize; 3]),

    #[error("class count {0} leaves no foreground classes")]
    NoForeground(usize),

    #[error("label {found} out of range for {classes} classes")]
    ClassRange { found: u8, classes: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;
