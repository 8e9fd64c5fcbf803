//! File-driven front end for `ktune-core`: JSON job files, the replay and
//! external-command backends, CSV reports, repeated-search statistics and
//! the `ktune` command-line tool.

pub mod commands;
pub mod external;
pub mod job;
pub mod replay;
pub mod report;
pub mod stats;

use std::io;
use std::path::PathBuf;

use ktune_core::search::SearchError;
use ktune_core::{BackendError, SpaceError, TunerError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid job file {}: {message}", path.display())]
    Job { path: PathBuf, message: String },
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for an empty search space, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        let empty = matches!(
            self,
            Error::Tuner(TunerError::EmptySpaceAfterConstraints)
                | Error::Tuner(TunerError::Search(SearchError::EmptySpace))
                | Error::Tuner(TunerError::Search(SearchError::Space(SpaceError::EmptySpace)))
                | Error::Tuner(TunerError::Space(SpaceError::EmptySpace))
                | Error::Space(SpaceError::EmptySpace)
        );
        if empty {
            2
        } else {
            1
        }
    }
}

impl From<SearchError> for Error {
    fn from(e: SearchError) -> Self {
        Error::Tuner(e.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
