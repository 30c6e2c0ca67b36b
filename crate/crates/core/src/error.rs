use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value was evaluated outside the domain where it is defined.
    #[error("{what} = {value} is outside the valid range [{lo}, {hi}]")]
    Domain {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid {what}: {message}")]
    Validation { what: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    // The inner errors are part of the message, so they are not exposed as
    // sources; otherwise chained reporting prints them twice.
    #[error("{module}: {inner}")]
    Module {
        module: &'static str,
        inner: Box<Error>,
    },

    #[error("i/o error on {}: {cause}", path.display())]
    Io { path: PathBuf, cause: std::io::Error },
}

impl Error {
    pub fn domain(what: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Error::Domain {
            what: what.into(),
            value,
            lo,
            hi,
        }
    }

    pub fn validation(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            what: what.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    /// Wraps the error with the name of the module that raised it.
    pub fn in_module(self, module: &'static str) -> Self {
        match self {
            e @ Error::Module { .. } => e,
            e => Error::Module {
                module,
                inner: Box::new(e),
            },
        }
    }
}
