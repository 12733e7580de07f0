use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("fit failed: {message} (best residual rmse {best_residual:e})")]
    FitFailure { message: String, best_residual: f64 },

    #[error("no crossing: {0}")]
    NoCrossing(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("target {target} unreachable: at most {max_at_500} is achievable at n = 500")]
    TargetUnreachable { target: f64, max_at_500: f64 },

    #[error("feature selection failed at step {step}: {source}")]
    Selection {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
