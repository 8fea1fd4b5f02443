use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("vector norm {norm:e} is below the 1e-12 floor")]
    ZeroNorm { norm: f64 },

    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("gradient check failed for {} parameter(s): {}", .offenders.len(), .offenders.join(", "))]
    ToleranceExceeded { offenders: Vec<String> },

    #[error("unknown stream `{0}` (expected joint, motion or bone)")]
    UnknownStream(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("sequence too short for temporal resampling: T = {0}")]
    DegenerateLength(usize),

    #[error("part group mismatch: {0}")]
    PartGroupMismatch(String),

    #[error("channel width {channels} is not divisible by head count {heads}")]
    HeadDivisibility { channels: usize, heads: usize },

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("parameter structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("non-finite loss at iteration {iter}: {detail}")]
    NonFiniteLoss { iter: usize, detail: String },

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("class {0} has no samples after subsampling")]
    ClassMissing(usize),

    #[error("stream mismatch: {0}")]
    StreamMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
