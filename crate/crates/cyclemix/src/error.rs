use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the IO, training and orchestration layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cyclemix_core::Error),
    #[error("path error: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot decode {path}: {message}")]
    Item { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("training error: {0}")]
    Training(String),
    #[error("incomplete result grid: {0}")]
    IncompleteGrid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit code: 1 validation, 2 runtime or training, 3 incomplete report grid.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(cyclemix_core::Error::Numeric(_)) => 2,
            Self::Core(_) | Self::Item { .. } | Self::Config(_) | Self::Schema(_) => 1,
            Self::Io { .. } | Self::Tensor(_) | Self::Training(_) => 2,
            Self::IncompleteGrid(_) => 3,
        }
    }
}

/// Attaches a path to IO failures.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
