//! Error types shared across the engine.

use thiserror::Error;

/// Engine-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for all engine operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector had zero Euclidean norm where a direction was required.
    #[error("zero vector: cannot normalize a vector with no nonzero entry")]
    ZeroVector,

    /// Two vectors that must share a dimension did not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    /// A vector failed a construction invariant (empty, non-finite entry).
    #[error("invalid vector: {0}")]
    InvalidVector(String),

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// k outside the valid range for the given point set.
    #[error("invalid k: k={k} for {n} points")]
    InvalidK { k: usize, n: usize },

    /// A memory entry lacks an embedding the operation requires.
    #[error("entry {entry_id}: missing {which} embedding")]
    MissingEmbedding {
        entry_id: String,
        which: &'static str,
    },

    /// An aggregate over an empty collection.
    #[error("empty input")]
    EmptyInput,

    /// Pearson correlation over a constant sequence.
    #[error("degenerate variance: correlation undefined for constant input")]
    DegenerateVariance,

    /// Per-token entropy lower bound must be positive.
    #[error("invalid entropy rate h={0}: must be > 0")]
    InvalidH(f64),

    /// Model-provider failure.
    #[error(transparent)]
    Provider(#[from] ProviderError),

    /// Persistence failure.
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Errors raised by embedding / chat providers.
#[derive(Debug, Error)]
pub enum ProviderError {
    /// Transport-level failure after all retries were exhausted.
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    /// The provider answered, but the response shape was wrong
    /// (count or dimension mismatch, missing fields).
    #[error("provider response shape: {0}")]
    Shape(String),

    /// The provider rejected the prompt as too long; the caller must
    /// shrink K or the candidate pool.
    #[error("context overflow: provider rejected prompt length")]
    ContextOverflow,

    /// Logprobs were requested but the response carried none.
    #[error("missing logprobs in provider response")]
    MissingLogprobs,
}

/// Errors raised by the on-disk store.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: io error: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON on a specific line.
    #[error("{path}: parse error at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Well-formed JSON missing a required field.
    #[error("{path}: schema error at line {line}: missing field `{field}`")]
    Schema {
        path: String,
        line: usize,
        field: String,
    },

    /// The file declares a format version this build does not read.
    #[error("{path}: format version {found} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 for provider failures, 3 for data
    /// errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Provider(_) => 2,
            Error::Store(_)
            | Error::ZeroVector
            | Error::DimMismatch { .. }
            | Error::InvalidVector(_)
            | Error::InvalidK { .. }
            | Error::MissingEmbedding { .. }
            | Error::EmptyInput
            | Error::DegenerateVariance => 3,
            Error::InvalidArgument(_) | Error::InvalidH(_) => 1,
        }
    }
}
