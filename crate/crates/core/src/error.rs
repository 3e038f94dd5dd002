use thiserror::Error;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, dimension mismatch, or malformed input file.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values produced during evaluation or training.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Violation of the seed-exchange protocol framing.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
