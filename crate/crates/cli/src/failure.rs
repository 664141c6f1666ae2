use std::fmt;

use phonocycle::Error;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_STRICT: u8 = 3;

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }

    pub fn context(self, msg: impl fmt::Display) -> Self {
        Failure {
            code: self.code,
            error: self.error.context(msg.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Library errors on the input side: bad values, unparseable or unreadable
/// files. Write failures are tagged at the call site with [`Failure::runtime`].
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Domain(_) | Error::Validation(_) | Error::Parse { .. } | Error::Json(_) | Error::Io { .. } => EXIT_CONFIG,
        Error::Capacity { .. }
        | Error::Numeric(_)
        | Error::Analysis(_)
        | Error::InsufficientData(_)
        | Error::Structural(_)
        | Error::Instability { .. } => EXIT_RUNTIME,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            error: e.into(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub trait Context<T> {
    fn at(self, msg: impl fmt::Display) -> CliResult<T>;
}

impl<T> Context<T> for phonocycle::Result<T> {
    fn at(self, msg: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| Failure::from(e).context(msg))
    }
}

impl<T> Context<T> for CliResult<T> {
    fn at(self, msg: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.context(msg))
    }
}
