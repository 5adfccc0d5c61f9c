use thiserror::Error;

/// Errors raised by grid, field, operator and solver construction.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("ball around centre #{position} (cell {cell:?}) is not contained in its period cell")]
    BallOutsideCell { position: usize, cell: Vec<i64> },

    #[error("matrix at cell {cell} is not symmetric")]
    NotSymmetric { cell: usize },

    #[error("matrix at cell {cell} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { cell: usize, min_eigenvalue: f64 },

    #[error("geometric precondition violated: {0}")]
    Geometry(String),

    #[error("precondition violated at node {node}: {reason}")]
    NodePrecondition { node: usize, reason: String },

    #[error("eigensolver did not converge: worst residual {worst_residual:e} after {iterations} iterations")]
    NotConverged { worst_residual: f64, iterations: usize },

    #[error("empty spectral interval: no eigenvalue in [{lo}, {hi})")]
    EmptyInterval { lo: f64, hi: f64 },

    #[error("{0}")]
    Precondition(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
