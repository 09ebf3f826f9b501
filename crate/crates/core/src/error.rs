use std::io;

use thiserror::Error;

/// Errors surfaced by the coupling library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input at the API boundary (non-finite values, wrong lengths).
    #[error("validation error: {0}")]
    Validation(String),

    /// Call made in the wrong lifecycle or protocol state.
    #[error("state error: {0}")]
    State(String),

    /// Evaluation requested outside the admissible time range.
    #[error("domain error: time {t} outside [{start}, {end}]")]
    Domain { t: f64, start: f64, end: f64 },

    /// Inconsistent or unsupported configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("transport error: {0}")]
    Transport(#[from] io::Error),

    #[error("handshake error: {0}")]
    Handshake(String),

    /// Unexpected or undecodable message.
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn state(msg: impl Into<String>) -> Error {
    Error::State(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
