use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Position inside an input file, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub path: PathBuf,
    pub line: Option<usize>,
}

impl Location {
    pub fn file(path: &Path) -> Self {
        Location { path: path.to_path_buf(), line: None }
    }

    pub fn line(path: &Path, line: usize) -> Self {
        Location { path: path.to_path_buf(), line: Some(line) }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}", self.path.display()),
            None => write!(f, "{}", self.path.display()),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{at}: {message}")]
    Format { at: Location, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dgn_core::Error),
    #[error("all {repeats} repeats failed; first error: {first}")]
    AllRepeatsFailed { repeats: usize, first: String },
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(at: Location, message: impl Into<String>) -> Self {
        Error::Format { at, message: message.into() }
    }

    /// Process exit status: 1 configuration, 2 data, 3 every repeat failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Core(dgn_core::Error::Parameter(_)) => 1,
            Error::Io { .. } | Error::Format { .. } | Error::Core(_) => 2,
            Error::AllRepeatsFailed { .. } => 3,
        }
    }
}
