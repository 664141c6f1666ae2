use std::path::PathBuf;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configured enumeration or arithmetic cap was exceeded.
    #[error("capacity exceeded: {what} (limit {limit}); {hint}")]
    Capacity {
        what: String,
        limit: usize,
        hint: String,
    },

    /// A numerical routine failed to reach its tolerance.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A value violated a type invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A text input could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Blinking analysis could not separate the charge states.
    #[error("analysis error: {0}")]
    Analysis(String),

    /// Too few observations for an estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A lattice is structurally invalid (e.g. disconnected).
    #[error("structural error: {0}")]
    Structural(String),

    /// The dynamical matrix has a negative eigenvalue beyond tolerance.
    #[error("lattice instability: eigenvalue {eigenvalue:e} (mode {index}) below -{tolerance:e}")]
    Instability {
        index: usize,
        eigenvalue: f64,
        tolerance: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn from_csv(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        Error::Parse {
            line,
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
