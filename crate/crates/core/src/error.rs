use thiserror::Error;

use crate::reachtube::TubeBuild;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// The sampled perturbation exceeded the inflated maximum.
    #[error("cap underflow: mu * m_bar - d = {slack}")]
    CapUnderflow { slack: f64 },

    #[error("degenerate cap: lambda and delta_lambda are both zero")]
    DegenerateCap,

    #[error(
        "coverage {coverage:.4} below target {target:.4} after {batches} batches ({traces} traces)"
    )]
    CoverageNotReached {
        coverage: f64,
        target: f64,
        batches: usize,
        traces: usize,
        partial: Box<TubeBuild>,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("ensemble needs at least 2 members, got {got}")]
    InsufficientEnsemble { got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: usize, got: usize) -> Self {
        Error::Shape { expected, got }
    }

    /// Converts a serde_json error into a `Parse` error with a byte offset into `input`.
    pub(crate) fn from_json(err: serde_json::Error, input: &str) -> Self {
        let offset = byte_offset(input, err.line(), err.column());
        Error::Parse {
            offset,
            message: err.to_string(),
        }
    }
}

fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}
