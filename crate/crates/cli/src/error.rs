use thiserror::Error;

/// Front-end failures, split by the exit code they map to.
///
/// Everything that is the user's fault (unreadable files, malformed config,
/// violated model assumptions) exits with 1; numerical breakdowns inside the
/// engine (failed brackets, stalled iterations) exit with 2.
#[derive(Debug, Error)]
pub enum CliError {
    /// Config-file problem, pinned to the offending line.
    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] plastibite_core::Error),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 1 for input and validation problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
