use std::path::{Path, PathBuf};
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, config or input contents.
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Wraps a library error raised while handling `path`.
    pub fn core_at(path: &Path, e: wafertex_core::Error) -> Self {
        match e {
            wafertex_core::Error::Io(source) => CliError::io(path, source),
            other => CliError::Invalid(format!("{}: {other}", path.display())),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Invalid(_) => ExitCode::from(1),
            CliError::Io { .. } => ExitCode::from(2),
        }
    }
}

impl From<wafertex_core::Error> for CliError {
    fn from(e: wafertex_core::Error) -> Self {
        match e {
            wafertex_core::Error::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Invalid(other.to_string()),
        }
    }
}
