//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong length for the operation.
    #[error("{context}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A parameter violated its documented contract.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An operation that requires data was handed an empty collection.
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),

    /// The training cost became NaN or infinite.
    #[error("training diverged at epoch {epoch}: cost is not finite")]
    TrainingDiverged { epoch: usize },

    /// The cloud store already holds a record for this (sensor, day).
    #[error("duplicate upload from sensor {sensor} for day {day}")]
    DuplicateUpload { sensor: usize, day: usize },

    /// A scored set is missing one of the two classes required for ROC/AUC.
    #[error("scored set contains no {missing} examples")]
    MissingClass { missing: &'static str },

    /// An error that occurred while simulating a specific sensor-day.
    #[error("day {day}, sensor {sensor}: {source}")]
    Simulation {
        day: usize,
        sensor: usize,
        #[source]
        source: Box<Error>,
    },

    /// A run configuration could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A persisted artifact could not be decoded.
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },

    /// A run directory is missing required artifacts.
    #[error("incomplete run directory: missing {}", .0.join(", "))]
    Incomplete(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_sim(self, day: usize, sensor: usize) -> Self {
        Error::Simulation {
            day,
            sensor,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
