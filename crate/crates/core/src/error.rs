use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A value was NaN, infinite or otherwise outside its domain.
    InvalidArgument(String),
    /// Buffer or vector lengths disagree.
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A combination of settings that the requested operation cannot run with.
    Configuration(String),
    /// Integer accounting overflowed.
    Range(String),
    NotImplemented(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Dimension {
                what,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch for {what}: expected {expected}, found {found}"
            ),
            Error::Configuration(msg) => write!(f, "configuration error: {msg}"),
            Error::Range(msg) => write!(f, "range error: {msg}"),
            Error::NotImplemented(what) => write!(f, "not implemented: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Configuration(msg.into())
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(alloc::format!(
            "{what} contains NaN or infinite values"
        )))
    }
}
