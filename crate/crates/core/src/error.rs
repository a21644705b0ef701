use thiserror::Error;

use crate::solver::StationaryDistribution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("system is not stable: {0}")]
    Unstable(String),

    #[error("iteration did not converge: {0}")]
    Convergence(String),

    /// The tail criterion was not met before `N_max`; the partial distribution is kept.
    #[error("truncation level {n_max} reached with tail mass {tail:.3e} above tolerance")]
    Truncation {
        n_max: usize,
        tail: f64,
        partial: Box<StationaryDistribution>,
    },

    #[error("search budget exhausted: {0}")]
    Budget(String),

    #[error("matrix is singular to working precision: {0}")]
    Singular(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("argument out of range: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Parse(_) | Error::Domain(_) | Error::Io(_) => 1,
            Error::Unstable(_) => 2,
            Error::Convergence(_) | Error::Truncation { .. } | Error::Singular(_) => 3,
            Error::Budget(_) | Error::TooLarge(_) => 4,
            Error::Dimension(_) => 1,
        }
    }
}
