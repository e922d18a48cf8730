use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("state out of range: {0}")]
    OutOfRange(String),

    #[error("selected transition {from} -> {to} has zero forward probability")]
    ZeroForwardProbability { from: usize, to: usize },

    #[error("proposal distribution has no positive entries")]
    ZeroProposalProbability,

    #[error("conditional law has zero density at x = {x}")]
    DegenerateLaw { x: f64 },

    #[error("numerical CDF inversion failed for u = {u}")]
    InversionFailure { u: f64 },

    #[error("enumeration of {size} states exceeds the limit of {limit}")]
    EnumerationTooLarge { size: u64, limit: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("driving sequence exhausted: needed {needed} values, {available} available")]
    DrivingExhausted { needed: usize, available: usize },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
