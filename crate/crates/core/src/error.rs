use thiserror::Error;

use crate::gir::{NodeId, ObjectId};

/// Errors raised across the compiler pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("slice on object {object} addresses element {address} beyond size {size}")]
    OutOfBounds {
        object: ObjectId,
        address: u64,
        size: u64,
    },
    #[error("graph contains a cycle")]
    Cycle,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("profile error: {0}")]
    Profile(String),
    #[error("coverage error: write and read slices address different element sets")]
    Coverage,
    #[error("undefined read of {object}[{address}] by unit {unit} lane {lane} at node {node}")]
    UndefinedRead {
        object: String,
        address: u64,
        unit: u32,
        lane: u32,
        node: NodeId,
    },
    #[error("execution error: {0}")]
    Execution(String),
    #[error("unsupported operator `{0}`")]
    UnsupportedOperator(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("lowering error: {0}")]
    Lowering(String),
    #[error("merge error: {0}")]
    Merge(String),
    #[error("object `{object}` needs {needed} elements per {level} instance, capacity is {capacity}")]
    Allocation {
        object: String,
        level: String,
        needed: u64,
        capacity: u64,
    },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
