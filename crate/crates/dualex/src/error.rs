use thiserror::Error;

/// Errors raised by the solvers and the geometry helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{what} did not converge after {iterations} iterations (best gap {best_gap:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        best_gap: f64,
    },
    #[error("{what} exceeded its budget of {budget} queries (best gap {best_gap:e})")]
    Budget {
        what: &'static str,
        budget: u64,
        best_gap: f64,
        best_point: Vec<f64>,
    },
    #[error("oracle precondition violated: {0}")]
    Contract(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Attach a round index, keeping the innermost one if already tagged.
    pub fn at_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                source: Box::new(e),
            },
        }
    }

    /// Strip round tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Round { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}
