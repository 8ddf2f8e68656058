use std::path::PathBuf;

use mmmf_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file does not match the declared columns.
    #[error("schema error: {0}")]
    Schema(String),

    /// `line` counts the header as line 1.
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },

    #[error("duplicate timestamp {timestamp} (line {line})")]
    DuplicateTimestamp { line: usize, timestamp: String },

    #[error("no rows for date {date}, which lies between covered dates")]
    Gap { date: String },

    #[error("no monthly value for {month}")]
    Coverage { month: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("plot error: {0}")]
    Plot(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 1 configuration, 2 data, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Core(e) => core_exit_code(e),
            _ => 2,
        }
    }
}

/// [`Error::exit_code`] for a bare core error.
pub fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Config(_) | CoreError::FormulationInapplicable(_) | CoreError::Contract(_) => 1,
        CoreError::Divergence { .. } | CoreError::NonFiniteGradient(_) => 3,
        _ => 2,
    }
}
