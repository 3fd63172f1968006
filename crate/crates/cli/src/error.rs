use std::path::PathBuf;

use thiserror::Error;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed bundle: {message}")]
    Bundle { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Precondition(String),

    #[error(transparent)]
    Core(#[from] metaforge::Error),
}

impl CliError {
    /// 2 for unreadable or malformed input, 3 for violated preconditions,
    /// 4 for quality gates.
    pub fn exit_code(&self) -> i32 {
        use metaforge::Error as E;
        match self {
            CliError::Io { .. } | CliError::Bundle { .. } => 2,
            CliError::Config(_) | CliError::Precondition(_) => 3,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Format { .. } => 2,
                E::EmptyMesh(_)
                | E::DegenerateFace { .. }
                | E::DegenerateGeometry(_)
                | E::InvalidArgument(_)
                | E::RankDeficient { .. } => 3,
                E::Diverged { .. } | E::TooManyDropped { .. } | E::InsufficientTargets { .. } => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
