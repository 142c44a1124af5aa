use std::path::{Path, PathBuf};

use aepo_core::env::EnvError;
use aepo_core::metrics::MetricsError;
use aepo_core::policy::PolicyError;
use aepo_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file parsed but does not match the expected layout.
    #[error("{}:{line}: {msg}", path.display())]
    Schema {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{responses} responses but {tasks} tasks")]
    CountMismatch { responses: usize, tasks: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn schema(path: &Path, line: usize, msg: impl ToString) -> Self {
        CliError::Schema {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        }
    }

    /// 2 IO, 3 empty after filtering, 4 numeric failure, 5 schema or count mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Train(TrainError::EmptyAfterFilter) => 3,
            CliError::Train(TrainError::NonFiniteGradient { .. }) => 4,
            CliError::Train(_)
            | CliError::Schema { .. }
            | CliError::CountMismatch { .. }
            | CliError::Config(_)
            | CliError::Env(_)
            | CliError::Metrics(_)
            | CliError::Policy(_) => 5,
        }
    }
}
