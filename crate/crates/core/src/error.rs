use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("grid too large for a dense method: {points} unknowns (limit {limit})")]
    GridTooLarge { points: usize, limit: usize },

    #[error("eigensolver did not converge after {iterations} iterations (best residuals {residuals:?})")]
    SolverFailure {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error(
        "wave-operator horizon too small: tail bound {tail:.3e} exceeds tolerance {tolerance:.3e}; try a horizon of {suggested:.1}"
    )]
    HorizonTooSmall {
        tail: f64,
        tolerance: f64,
        suggested: f64,
    },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
