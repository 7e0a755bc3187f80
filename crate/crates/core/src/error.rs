use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("solver failed for parameter {params:?}: {source}")]
    Solver {
        params: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch} (validation loss {loss})")]
    Diverged { epoch: usize, loss: f64, history: Vec<(f64, f64)> },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
