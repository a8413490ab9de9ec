use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("variables belong to different tapes")]
    CrossTape,

    #[error("dimension mismatch: expected {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite loss at step {step}: data={data:e} physics={physics:e} ic={ic:e}")]
    NonFiniteLoss {
        step: usize,
        data: f64,
        physics: f64,
        ic: f64,
    },

    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
