use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by fitting, inference, testing and dataset I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ill-posed subproblem: {0}")]
    IllPosed(String),

    #[error("no convergence after {iterations} iterations: {context}")]
    NonConvergence { iterations: usize, context: String },

    #[error("insufficient sample: n = {n} but at least {required} observations are needed")]
    InsufficientSample { n: usize, required: usize },

    #[error("covariance is numerically invalid: {0}")]
    Covariance(String),

    #[error("the permutation test cannot be applied in the presence of confounders (m = {m})")]
    PermutationWithConfounders { m: usize },

    #[error("at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::IllPosed(_)
            | Error::NonConvergence { .. }
            | Error::Covariance(_)
            | Error::InsufficientSample { .. } => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidInput(_) => "invalid_input",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::IllPosed(_) => "ill_posed",
            Error::NonConvergence { .. } => "non_convergence",
            Error::InsufficientSample { .. } => "insufficient_sample",
            Error::Covariance(_) => "covariance",
            Error::PermutationWithConfounders { .. } => "permutation_with_confounders",
            Error::AtIteration { source, .. } => source.kind(),
        }
    }
}
