//! Crate-wide error type.
//!
//! One variant per failure class so callers (and the CLI exit-code mapping)
//! can dispatch without string matching.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Tensor or graph shape mismatch.
    Shape(String),
    /// A numeric parameter is outside its valid domain (negative variance,
    /// non-positive temperature, weights that do not sum to one, ...).
    InvalidParam(String),
    /// Invalid model or run configuration (unsupported channel scale, ...).
    Config(String),
    /// Graph structure violates an operation's precondition.
    Structure(String),
    /// Calibration statistics are missing for a named edge.
    MissingStats(String),
    /// Stream planning failed; reports the edge and the minimum FIFO depth
    /// that avoids deadlock.
    Plan { edge: String, required_depth: usize },
    /// The streaming simulation deadlocked; lists the blocked edges.
    Deadlock(Vec<String>),
    /// File does not start with the expected magic bytes.
    BadMagic,
    /// Stored checksum does not match the payload.
    CrcMismatch { expected: u32, actual: u32 },
    /// A parameter slot of the graph has no record in the container.
    MissingTensor(String),
    /// A stored tensor does not fit the graph slot it is bound to.
    TensorShapeMismatch(String),
    /// Malformed file contents (bad header, truncation, unknown field).
    Parse(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A cross-check requested by the caller failed (e.g. simulator/engine
    /// logits parity).
    Verification(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Structure(msg) => write!(f, "invalid graph structure: {msg}"),
            Error::MissingStats(edge) => write!(f, "missing calibration stats for edge: {edge}"),
            Error::Plan { edge, required_depth } => write!(
                f,
                "stream plan would deadlock on edge {edge}: requires FIFO depth >= {required_depth}"
            ),
            Error::Deadlock(edges) => {
                write!(f, "simulation deadlocked; blocked edges: {}", edges.join(", "))
            }
            Error::BadMagic => write!(f, "bad magic: not a weight container"),
            Error::CrcMismatch { expected, actual } => {
                write!(f, "crc mismatch: stored {expected:08x}, computed {actual:08x}")
            }
            Error::MissingTensor(name) => write!(f, "missing tensor record: {name}"),
            Error::TensorShapeMismatch(msg) => write!(f, "tensor shape mismatch: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Verification(msg) => write!(f, "verification failed: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
