use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the registration engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("index ({i}, {j}, {k}) out of range for grid dims {dims:?}")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        k: usize,
        dims: [usize; 3],
    },

    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dense oracle too large: {rows}x{cols} exceeds {limit} points per grid")]
    OracleTooLarge { rows: usize, cols: usize, limit: usize },

    #[error("malformed header in {path}: {msg}")]
    MalformedHeader { path: PathBuf, msg: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unsupported element type '{ty}' in {path}")]
    UnsupportedElementType { path: PathBuf, ty: String },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("landmark count mismatch: {reference} reference vs {template} template")]
    LandmarkCountMismatch { reference: usize, template: usize },

    #[error("level {level}, {phase}: {source}")]
    Level {
        level: usize,
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn at_level(self, level: usize, phase: &'static str) -> Self {
        Error::Level {
            level,
            phase,
            source: Box::new(self),
        }
    }

    /// True for errors caused by reading or writing files.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::MalformedHeader { .. }
            | Error::TruncatedPayload { .. }
            | Error::UnsupportedElementType { .. }
            | Error::Parse { .. } => true,
            Error::Level { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
