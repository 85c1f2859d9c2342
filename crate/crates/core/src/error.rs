use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid excitation: {0}")]
    InvalidSpec(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("spectra are not on a common bin grid")]
    GridMismatch,

    #[error("unstable filter: spectral radius {radius}")]
    UnstableFilter { radius: f64 },

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("lag difference {lag} outside autocovariance support 0..={support}")]
    LagOutOfSupport { lag: usize, support: usize },

    #[error("invalid noise model: {0}")]
    InvalidNoiseModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation diverged at sample {sample} (|value| = {magnitude:e})")]
    Diverged { sample: usize, magnitude: f64 },

    #[error("steady state not reached within {periods} warm-up periods")]
    NoSteadyState { periods: usize },

    #[error("invalid experiment record: {0}")]
    InvalidRecord(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
