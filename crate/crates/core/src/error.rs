use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-binary entry {value} at {location}")]
    NonBinary { value: f64, location: String },

    #[error("subarray has not been programmed")]
    Unprogrammed,

    #[error("network has not been mapped")]
    Unmapped,

    #[error("subarray capacity exceeded: {needed} subarrays needed, {available} available")]
    CapacityExceeded { needed: usize, available: usize },

    #[error("netlist syntax error at line {line}, column {column}: {message}")]
    NetlistSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown netlist card `{card}` at line {line}")]
    UnknownCard { card: String, line: usize },

    #[error("dangling node at line {line}: {message}")]
    DanglingNode { line: usize, message: String },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("training failed at step {step}: loss is {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("buffer overflow: address {address:#x} is beyond the {capacity}-slot buffer")]
    BufferOverflow { address: u16, capacity: usize },

    #[error("infeasible calibration target: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::NetlistSyntax {
            line,
            column,
            message: message.into(),
        }
    }
}
