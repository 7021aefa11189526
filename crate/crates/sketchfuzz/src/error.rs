//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("store record encode: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("store line {0}: {1}")]
    BadRecord(usize, String),
}

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("bad target descriptor: {0}")]
    BadTarget(String),
    #[error("engine unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExpandError {
    #[error("unknown generator keyword <{0}>")]
    UnknownKeyword(String),
    #[error("schema is empty but the fragment references tables or columns")]
    EmptySchema,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("completion backend unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("assignment does not cover every hole exactly once")]
    IncompleteAssignment,
    #[error("fragment expansion failed: {0}")]
    Expand(#[from] ExpandError),
}

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("check does not hold on the initial statement list")]
    FlakyCheck,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report file: {0}")]
    Malformed(String),
}
