//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix has the wrong dimension.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An operation received an empty input it cannot work with.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A numeric input contained NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A trace is too short for the requested operation.
    #[error("trace `{id}` has {len} samples but {need} are required")]
    TraceTooShort { id: String, len: usize, need: usize },

    /// Traces passed together do not share shape, horizon, or step.
    #[error("inconsistent traces: {0}")]
    InconsistentTraces(String),

    /// A switching instant lies outside the open interval (0, K).
    #[error("switching instant {instant} outside (0, {horizon})")]
    InstantOutOfRange { instant: usize, horizon: usize },

    /// A detection threshold is missing or not positive.
    #[error("invalid detection config: {0}")]
    InvalidDetectionConfig(String),

    /// An unknown strategy name was requested from a registry.
    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    /// The switching schedule does not cover the simulation horizon.
    #[error("switching schedule does not cover sample {0}")]
    ScheduleGap(usize),

    /// Sampling period and switching period are not commensurate.
    #[error("incommensurate timing: {0}")]
    IncommensurateTiming(String),

    /// A configuration value is invalid.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A pipeline stage is missing an input another stage should produce.
    #[error("missing input for stage `{stage}`: {what} (produced by `{producer}`)")]
    MissingStageInput {
        stage: &'static str,
        what: String,
        producer: &'static str,
    },

    /// A pipeline stage failed.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wrap an error with the name of the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
