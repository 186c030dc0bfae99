use std::io;

use thiserror::Error;

/// Errors produced by compression, archive I/O, planning and retrieval.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("level {level} out of range 1..={levels}")]
    InvalidLevel { level: u32, levels: u32 },

    #[error("error bound must be positive and finite, got {0}")]
    InvalidErrorBound(f64),

    #[error("quantization code {0} outside the negabinary code range")]
    CodeOutOfRange(i64),

    #[error("discarded digit count {0} outside 0..=32")]
    DigitCountOutOfRange(u32),

    #[error("plane {requested} requested but only {available} planes are available")]
    MissingPlanes { requested: usize, available: usize },

    #[error("unknown lossless backend id {0}")]
    UnknownBackend(u8),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("not an archive (bad magic)")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("invalid retrieval plan: {0}")]
    InvalidPlan(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("session does not belong to this archive")]
    SessionMismatch,

    #[error("scalar type does not match the archive")]
    ScalarMismatch,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
