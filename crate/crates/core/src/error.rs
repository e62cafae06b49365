use std::io;

use thiserror::Error;

/// Errors produced anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("corrupted index map: {0}")]
    Corruption(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("state diverged at step {step} in layer {layer}: |xi| = {magnitude:e}")]
    Divergence {
        step: usize,
        layer: usize,
        magnitude: f64,
    },

    #[error(
        "oracle unavailable: relaxation residual {residual:e} above tolerance after {steps} steps"
    )]
    OracleUnavailable { residual: f64, steps: usize },

    #[error("non-finite gradient in connection {0}; update rejected")]
    NonFiniteGradient(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("undefined energy ratio: {0}")]
    UndefinedRatio(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint version {found} not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("batch {batch} failed: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// The innermost error, looking through batch wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Batch { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
