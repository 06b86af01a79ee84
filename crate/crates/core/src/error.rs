use std::path::PathBuf;

use crate::transport::WorkerId;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid range: {0}")]
    Range(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible partition: {0}")]
    Partition(String),

    #[error("unsupported topology: {0}")]
    Topology(String),

    #[error("timed out waiting on worker {waiting_on}: missing messages from {missing:?}")]
    Timeout {
        waiting_on: WorkerId,
        missing: Vec<WorkerId>,
    },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("bad magic number {found} in {path} (expected {expected})")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("bound undefined: {0}")]
    BoundUndefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
