use thiserror::Error;

use crate::model::WeightError;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },
    #[error("unsupported sample rate {0} Hz, expected 16000")]
    SampleRate(u32),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Weights(#[from] WeightError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
