//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any subsystem of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty document")]
    EmptyDocument,

    #[error("empty passage")]
    EmptyPassage,

    #[error("stride exceeds window (stride={stride}, window={window})")]
    StrideExceedsWindow { stride: usize, window: usize },

    #[error("stride must be positive")]
    ZeroStride,

    #[error("window must be positive")]
    ZeroWindow,

    #[error("chunk {chunk_index} exceeds capacity: sequence length {needed} > max_seq {max_seq}")]
    ChunkCapacity {
        chunk_index: usize,
        needed: usize,
        max_seq: usize,
    },

    #[error("empty chunk list")]
    EmptyChunkList,

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("sequence length {len} exceeds encoder max_seq {max_seq}")]
    SequenceTooLong { len: usize, max_seq: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("query vectors required when feed_query is enabled")]
    MissingQueryVectors,

    #[error("empty kernel list")]
    EmptyKernelList,

    #[error("kernel sigma must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("per-query vectors have mismatched lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("insufficient samples for significance test (need at least 2, got {0})")]
    InsufficientSamples(usize),

    #[error("degenerate distribution: no passages end in the first chunk")]
    DegenerateDistribution,

    #[error("infeasible placement: {0}")]
    InfeasiblePlacement(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("parse error in {file} line {line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
