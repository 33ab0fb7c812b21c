//! Errors carrying the process exit code.

use std::fmt;

use wrinkle_core::Error;

/// Exit code for a numerical failure (non-convergence, failed property).
pub const EXIT_NUMERICAL: u8 = 1;
/// Exit code for a usage or configuration error.
pub const EXIT_USAGE: u8 = 2;

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Failure {
        Failure { code: EXIT_USAGE, error: error.into() }
    }

    pub fn numerical(error: impl Into<anyhow::Error>) -> Failure {
        Failure { code: EXIT_NUMERICAL, error: error.into() }
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Failure {
        Failure { code: self.code, error: self.error.context(msg) }
    }
}

/// Bad input (grids, parameters, files, infeasible tables) is a usage error;
/// breakdowns of the numerics are numerical failures.
impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match e {
            Error::Numerical(_) | Error::Schedule(_) => EXIT_NUMERICAL,
            Error::Grid(_)
            | Error::Shape(_)
            | Error::Aliasing(_)
            | Error::Infeasible(_)
            | Error::Parameter(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => EXIT_USAGE,
        };
        Failure { code, error: e.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}
