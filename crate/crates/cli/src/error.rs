use std::path::{Path, PathBuf};

use segconf::confmap::{ConfmapError, ScorerError, SyntheticError};
use segconf::dataset::DatasetError;
use segconf::eval::EvalError;
use segconf::grid::RasterIoError;
use segconf::report::ReportError;
use thiserror::Error;

/// Validation problems exit with 1, file and scorer-process problems with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |err| CliError::io(path, err)
}

impl From<ScorerError> for CliError {
    fn from(err: ScorerError) -> Self {
        match err {
            ScorerError::Unsupported(_) => CliError::Validation(err.to_string()),
            _ => CliError::Io(err.to_string()),
        }
    }
}

impl From<ConfmapError> for CliError {
    fn from(err: ConfmapError) -> Self {
        match err {
            ConfmapError::Scorer { entry, source } => {
                let inner = CliError::from(source);
                let msg = match entry {
                    Some(i) => format!("catalog entry or trial {i}: {inner}"),
                    None => inner.to_string(),
                };
                match inner {
                    CliError::Validation(_) => CliError::Validation(msg),
                    CliError::Io(_) => CliError::Io(msg),
                }
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<RasterIoError> for CliError {
    fn from(err: RasterIoError) -> Self {
        CliError::Io(err.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(err: DatasetError) -> Self {
        match err {
            DatasetError::Raster(e) => e.into(),
            DatasetError::Io { .. } => CliError::Io(err.to_string()),
            _ => CliError::Validation(err.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(err: EvalError) -> Self {
        CliError::Validation(err.to_string())
    }
}

impl From<SyntheticError> for CliError {
    fn from(err: SyntheticError) -> Self {
        CliError::Validation(err.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(err: ReportError) -> Self {
        match err {
            ReportError::Io { .. } => CliError::Io(err.to_string()),
            _ => CliError::Validation(err.to_string()),
        }
    }
}

/// `path` as an absolute, symlink-free path.
pub(crate) fn canonical(path: &Path) -> Result<PathBuf, CliError> {
    path.canonicalize().map_err(io_error(path))
}
