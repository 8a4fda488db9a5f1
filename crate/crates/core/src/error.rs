//! Error taxonomy shared across the crate.
//!
//! The categories matter to callers: the CLI maps them onto distinct exit
//! codes, and tests assert on them. `Config` covers invalid or inconsistent
//! configuration, `Contract` covers violated call preconditions (stepping a
//! finished episode, empty inputs, single-class metrics), and `Numeric`
//! covers NaN/divergence aborts during training.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration (bad dimensions, overfull grid, bad discount...).
    Config(String),
    /// A call-site precondition was violated.
    Contract(String),
    /// A training loss or score became non-finite.
    Numeric(String),
    /// Filesystem failure while reading or writing artifacts.
    Io(std::io::Error),
    /// Malformed checkpoint / dataset / manifest content.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
