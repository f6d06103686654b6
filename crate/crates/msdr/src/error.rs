//! Error categories of the command-line contract.

use crate::pnm::PnmFileError;

/// Exit status 1: bad invocation or configuration.
pub const EXIT_USAGE: i32 = 1;
/// Exit status 2: the request was understood but the input is invalid in
/// the problem domain (failing dilation pattern, inconsistent model config).
pub const EXIT_INVALID: i32 = 2;
/// Exit status 3: a file could not be read, parsed or written.
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => EXIT_USAGE,
            AppError::Invalid(_) => EXIT_INVALID,
            AppError::Io(_) => EXIT_IO,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        AppError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<msdr_core::Error> for AppError {
    fn from(e: msdr_core::Error) -> Self {
        AppError::Invalid(e.to_string())
    }
}

impl From<PnmFileError> for AppError {
    fn from(e: PnmFileError) -> Self {
        AppError::Io(e.to_string())
    }
}

pub type AppResult<T> = Result<T, AppError>;
