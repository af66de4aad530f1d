use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("solver failure{}: {reason} after {iterations} iterations (residual {residual:.3e})", slab.map(|s| format!(" on slab {s}")).unwrap_or_default())]
    SolverFailure {
        slab: Option<usize>,
        reason: String,
        iterations: usize,
        residual: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attach a slab index to a solver failure raised inside a single slab solve.
    pub fn on_slab(self, index: usize) -> Self {
        match self {
            Error::SolverFailure {
                reason,
                iterations,
                residual,
                ..
            } => Error::SolverFailure {
                slab: Some(index),
                reason,
                iterations,
                residual,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
