use std::fmt;

use eqfree_core::Error;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, flags or input files.
    Config(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if is_numerical(e) => 1,
            CliError::Core(_) => 2,
        }
    }
}

/// Errors raised by the numerics, as opposed to bad input.
pub fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::Integration { .. }
            | Error::Trajectory { .. }
            | Error::Degenerate(_)
            | Error::Eigen(_)
            | Error::OutOfSupport { .. }
            | Error::Newton(_)
    )
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Core(e) if is_numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}
