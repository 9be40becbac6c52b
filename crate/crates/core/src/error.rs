//! Error type shared by the numeric core.

use alloc::string::String;
use core::fmt;

/// Errors raised by core operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor or network dimensions do not line up.
    Shape(String),
    /// An index (e.g. a class label) is out of range.
    Index(String),
    /// Invalid values: non-finite entries, bad parameters, degenerate inputs.
    Validation(String),
    /// A scalar argument is outside its documented range.
    Range(String),
    /// Mathematical domain violation (e.g. harmonic mean of a non-positive value).
    Domain(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Index(msg) => write!(f, "index error: {msg}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Range(msg) => write!(f, "range error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
        }
    }
}

#[cfg(test)]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
