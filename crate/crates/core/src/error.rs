//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the toolkit's domain operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value fell outside its declared range.
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Dimensions do not satisfy a shape constraint (divisibility, parity, equality).
    #[error("shape error: {0}")]
    Shape(String),

    /// A token or frame budget was exceeded.
    #[error("budget error: {0}")]
    Budget(String),

    /// Invalid configuration (weights, windows, presets).
    #[error("config error: {0}")]
    Config(String),

    /// A caller-side contract was violated (fully-masked query row, absent target, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Decoded tokens describe an impossible box (y1 > y2 or x1 > x2).
    #[error("malformed box: decoded corners out of order ({0})")]
    MalformedBox(String),

    /// Input failed a validation check (non-unit normal, non-finite gradient, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A serialized record does not match the schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Filesystem failure while reading or writing fixtures.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn range(what: &'static str, value: f64, lo: f64, hi: f64) -> Self {
        Error::Range {
            what,
            value,
            lo,
            hi,
        }
    }
}
