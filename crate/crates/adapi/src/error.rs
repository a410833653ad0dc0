//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A real value does not fit the fixed-point range of the codec.
    #[error("fixed-point encoding overflow: |{value}| exceeds range for {frac_bits} fractional bits")]
    EncodingOverflow { value: f64, frac_bits: u32 },

    /// Tensor or share shapes do not line up.
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// Two shares that should belong to opposite parties (or the same party) do not.
    #[error("party mismatch: {0}")]
    PartyMismatch(String),

    /// A Beaver or boolean triple was consumed twice.
    #[error("triple already consumed")]
    TripleReused,

    /// The triple stream ran dry.
    #[error("triple source exhausted")]
    TripleExhausted,

    /// Generic protocol-level failure (desync, bad payload, decode failure).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Frame arrived with an unexpected tag.
    #[error("tag mismatch: expected {expected:?}, got {got:?}")]
    TagMismatch { expected: String, got: String },

    /// Channel-level failure (closed peer, truncated frame, timeout).
    #[error("transport error: {0}")]
    Transport(String),

    /// Mask family violates the nesting requirement.
    #[error("mask nesting violation at level {level}, tensor {tensor}, index {index}")]
    NestingViolation {
        level: usize,
        tensor: usize,
        index: usize,
    },

    /// Stored payload does not match its checksum.
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),

    /// Training diverged or was misconfigured.
    #[error("training error: {0}")]
    Training(String),

    /// Bad experiment or file configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
