use std::io;

use thiserror::Error;

/// Errors raised by every stage of the generation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "privacy audit failed: composed (eps={epsilon}, delta={delta}) exceeds declared \
         (eps={total_epsilon}, delta={total_delta}); offending entries: {offending:?}"
    )]
    Audit {
        epsilon: f64,
        delta: f64,
        total_epsilon: f64,
        total_delta: f64,
        offending: Vec<String>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Prefixes the message with `ctx`, keeping the variant.
    pub fn context(self, ctx: &str) -> Error {
        match self {
            Error::Parse { row, msg } => Error::Parse {
                row,
                msg: format!("{ctx}: {msg}"),
            },
            Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
            Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
