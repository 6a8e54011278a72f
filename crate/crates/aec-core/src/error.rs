use std::path::PathBuf;

/// Errors produced by the processing, synthesis, and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid frame: expected {expected} samples, got {got}")]
    InvalidFrame { expected: usize, got: usize },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("model shape mismatch: expected {expected}, got {got} ({context})")]
    ModelShape {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("synthesis error: {0}")]
    Synthesis(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("wav error in {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
