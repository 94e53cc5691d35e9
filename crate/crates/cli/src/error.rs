use std::path::PathBuf;

use thiserror::Error;

/// Every failure carries the process exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("training diverged: {0}")]
    Diverged(vsematch::Error),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Core(vsematch::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } | CliError::Core(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Shape(_) => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<vsematch::Error> for CliError {
    fn from(e: vsematch::Error) -> Self {
        use vsematch::Error as E;
        match e {
            E::DivergedLoss { .. } => CliError::Diverged(e),
            E::DimensionMismatch { .. } | E::ShapeMismatch { .. } => CliError::Shape(e.to_string()),
            E::InvalidConfig(_) | E::InvalidSpec(_) | E::InsufficientCandidates { .. } | E::TooFewQueries(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Core(e),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
