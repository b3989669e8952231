//! Crate-wide error type.

use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input text could not be parsed (non-numeric cell, ragged CSV row, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// Matrix or argument dimensions are unusable (e.g. fewer than two rows).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input is degenerate for the requested construction.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An index refers outside the object it addresses.
    #[error("index error: {0}")]
    Index(String),

    /// A numerical kernel produced a non-finite value or lost positive
    /// definiteness.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Iterates grew without bound (step size too aggressive).
    #[error("divergence: {0}")]
    Divergence(String),

    /// A path exceeded its global iteration cap.
    #[error("iteration cap exceeded: {0}")]
    IterationCap(String),

    /// An event log does not describe a complete path to full fusion.
    #[error("incomplete event log: {0}")]
    IncompleteEvents(String),

    /// A scalar argument lies outside its admissible range.
    #[error("range error: {0}")]
    Range(String),

    /// Two aligned collections disagree in length.
    #[error("length mismatch: {0}")]
    Length(String),

    /// An array has the wrong shape for the operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
