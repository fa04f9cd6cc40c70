use thiserror::Error;

pub type Result<T> = std::result::Result<T, ZetaError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZetaError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ZetaError::Shape(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ZetaError::Parameter(msg.into()))
}
