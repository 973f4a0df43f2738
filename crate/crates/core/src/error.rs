//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error in layer {layer}, field `{field}`: {msg}")]
    Validation {
        layer: usize,
        field: &'static str,
        msg: String,
    },
    #[error("input magnitude {value} exceeds time-step budget {time_steps}")]
    MagnitudeExceedsTimeSteps { value: i64, time_steps: u32 },
    #[error("neuron invariant violation: {0}")]
    InvariantViolation(String),
    #[error("row id {row} out of range (rows = {rows})")]
    RowIdOutOfRange { row: usize, rows: usize },
    #[error("batch of {got} spikes exceeds the {ways}-way weight buffer")]
    BatchTooWide { got: usize, ways: usize },
    #[error("spike position {0} does not fit the 12-bit payload field")]
    PositionOverflow(u32),
    #[error("hop count ({m},{n}) exceeds the 3-bit dest fields")]
    HopOverflow { m: u32, n: u32 },
    #[error("flit checksum mismatch")]
    ChecksumMismatch,
    #[error("no routing table entry for flow {src:?} -> {dst:?}")]
    NoPathConfigured { src: (u32, u32), dst: (u32, u32) },
    #[error("duplicate arrival of input spine ({0},{1})")]
    DuplicateArrival(u32, u32),
    #[error("trace has no recorded output")]
    EmptyTrace,
    #[error("layer {layer} demand ({demand}) exceeds core capacity ({capacity}) for {resource}")]
    LayerTooLarge {
        layer: usize,
        demand: u64,
        capacity: u64,
        resource: &'static str,
    },
    #[error("{partitions} partitions do not fit a {rows}x{cols} mesh")]
    TooManyPartitions {
        partitions: usize,
        rows: usize,
        cols: usize,
    },
    #[error("mapping incomplete: {0}")]
    MappingIncomplete(String),
    #[error("deadlock detected at cycle {cycle}: {detail}")]
    DeadlockDetected { cycle: u64, detail: String },
    #[error("prediction lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Process exit code category: 2 for input/validation problems, 3 for
    /// simulation-time failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Parse(_)
            | SimError::Validation { .. }
            | SimError::MagnitudeExceedsTimeSteps { .. }
            | SimError::LayerTooLarge { .. }
            | SimError::TooManyPartitions { .. }
            | SimError::MappingIncomplete(_)
            | SimError::HopOverflow { .. }
            | SimError::LengthMismatch(..)
            | SimError::Io(_) => 2,
            _ => 3,
        }
    }
}
