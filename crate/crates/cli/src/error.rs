use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] shockmort::Error),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("missing artifact {path}; run stage `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("unknown export format `{0}` (expected csv or quantile-summary)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
