use std::fmt::Display;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input, located by a field path or file name.
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },

    #[error(transparent)]
    Core(#[from] ttn_cme::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn invalid(path: impl Display, message: impl Display) -> CliError {
    CliError::Invalid { path: path.to_string(), message: message.to_string() }
}

impl CliError {
    /// 2 for invalid input, 3 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid { .. } => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(ttn_cme::Error::Io(_)) | CliError::Io { .. } | CliError::Csv(_) => 1,
            CliError::Core(_) => 2,
        }
    }
}

pub fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
