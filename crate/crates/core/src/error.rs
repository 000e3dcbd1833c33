use thiserror::Error;

/// Errors raised by the model, pretraining, sampler and post-processing routines.
#[derive(Debug, Error)]
pub enum NiftyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("rank deficiency: {0}")]
    Rank(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("empty chain")]
    EmptyChain,
    #[error("incomplete run directory {dir}: missing {missing:?}")]
    IncompleteRun { dir: String, missing: Vec<String> },
    #[error("non-finite log posterior at iteration {iteration}; state dump: {dump}")]
    NonFinite { iteration: usize, dump: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl NiftyError {
    /// True for failures caused by the numbers rather than the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            NiftyError::Numerical(_)
                | NiftyError::Degenerate(_)
                | NiftyError::Rank(_)
                | NiftyError::NonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, NiftyError>;
