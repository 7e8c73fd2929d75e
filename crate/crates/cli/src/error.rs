use std::fmt;

/// Failures of a run, each with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or parameters (exit 2).
    Validation(String),
    /// A numerical solver failed (exit 3).
    Solver(String),
    /// Writing artifacts failed (exit 1).
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<ctlab::Error> for CliError {
    fn from(e: ctlab::Error) -> Self {
        use ctlab::Error as E;
        match e {
            E::InvalidParameter(_) | E::InvalidInput(_) | E::GridMismatch | E::GridTooLarge { .. } => {
                CliError::Validation(e.to_string())
            }
            E::Io(io) => CliError::Io(io),
            E::SolverFailure { .. } | E::HorizonTooSmall { .. } | E::UndefinedRatio(_) => CliError::Solver(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
