use alloc::string::String;

/// Errors raised by the core algorithms.
///
/// The variants follow the error classes used across the toolkit so that the
/// command-line front end can map them onto exit codes.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// An argument is outside its admissible range or shapes disagree.
    #[error("value error: {0}")]
    Value(String),
    /// Structural inconsistency in datasets, folds, manifests or result grids.
    #[error("schema error: {0}")]
    Schema(String),
    /// A requested translator or entry does not exist.
    #[error("lookup error: {0}")]
    Lookup(String),
    /// Data from a fold's target domain reached a training-time code path.
    #[error("target leakage: {0}")]
    Leakage(String),
    /// Non-finite numbers where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! value_err {
    ($($arg:tt)*) => { $crate::error::Error::Value(alloc::format!($($arg)*)) };
}
macro_rules! schema_err {
    ($($arg:tt)*) => { $crate::error::Error::Schema(alloc::format!($($arg)*)) };
}
pub(crate) use schema_err;
pub(crate) use value_err;
