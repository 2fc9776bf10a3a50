//! Crate-wide error type.
//!
//! Numeric/shape misuse, bad configuration, and data-file problems are kept
//! as distinct variants so callers (notably the CLI) can map them to
//! different exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AmpsError {
    /// Operand shapes are incompatible for an operation.
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An axis argument is out of range for the operand's rank.
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    /// An input contained NaN or ±inf where finite values are required.
    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },

    /// A reduction axis has extent < 2 where statistics are undefined.
    #[error("{op}: degenerate extent {extent} in shape {shape:?}")]
    DegenerateExtent {
        op: &'static str,
        extent: usize,
        shape: Vec<usize>,
    },

    /// A token id is outside the vocabulary.
    #[error("{op}: token id {id} out of vocabulary (size {vocab})")]
    TokenOutOfVocab {
        op: &'static str,
        id: u32,
        vocab: usize,
    },

    /// An input that must be non-empty was empty.
    #[error("{op}: empty input ({what})")]
    EmptyInput { op: &'static str, what: &'static str },

    /// Invalid configuration value (message names the field and constraint).
    #[error("config: {0}")]
    Config(String),

    /// A data artifact (manifest, sidecar, checkpoint) is missing or malformed.
    #[error("data: {0}")]
    Data(String),

    /// Underlying I/O failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Anything else that went wrong at run time.
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, AmpsError>;

impl AmpsError {
    pub fn config(msg: impl Into<String>) -> Self {
        AmpsError::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        AmpsError::Data(msg.into())
    }
    pub fn runtime(msg: impl Into<String>) -> Self {
        AmpsError::Runtime(msg.into())
    }
}
