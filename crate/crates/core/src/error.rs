use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver, planner, problem generator and bench driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("padded length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("mechanism has {species} species, more than the {max_threads} threads a block allows")]
    UnsupportedMechanism { species: usize, max_threads: usize },

    #[error("{cells_per_block} cells of {species} species need {threads} threads, block limit is {max_threads}")]
    InvalidGrouping {
        cells_per_block: usize,
        species: usize,
        threads: usize,
        max_threads: usize,
    },

    #[error("invalid reduction plan: {0}")]
    InvalidPlan(String),

    #[error("matrix is singular (zero pivot in column {column})")]
    Singular { column: usize },

    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("solver failed at step {step}: {source}")]
    SolverAbort {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
