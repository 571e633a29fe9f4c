use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix not positive definite even with diagonal jitter {jitter:e}")]
    NumericalSingularity { jitter: f64 },
    #[error("hyperparameter fit failed: {0}")]
    FitFailure(String),
    #[error("evaluator fault: {0}")]
    EvaluatorFault(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("unknown problem `{0}`")]
    NotFound(String),
}
