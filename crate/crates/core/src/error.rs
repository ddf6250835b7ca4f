use thiserror::Error;

use crate::graph::ValidityReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask token present in a state that must be mask-free")]
    MaskPresent,
    #[error("cannot pad an empty batch")]
    EmptyBatch,
    #[error("degenerate vocabulary: {0}")]
    DegenerateVocab(String),
    #[error("timestep {t} out of range 1..={max}")]
    OutOfRange { t: usize, max: usize },
    #[error("stationary distribution requires mask_mix = 0, got {0}")]
    MaskMixNonzero(f64),
    #[error("observed state is unreachable from every clean candidate")]
    UnreachableState,
    #[error("model has not been trained")]
    UntrainedModel,
    #[error("degenerate box: width and height must be positive")]
    DegenerateBox,
    #[error("loss became non-finite at step {0}")]
    DivergedLoss(u64),
    #[error("no masked entity to complete")]
    NoMaskedEntity,
    #[error("all particle weights are zero")]
    AllZeroWeights,
    #[error("embedding service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid graph on line {line}: {report}")]
    InvalidGraph { line: usize, report: ValidityReport },
    #[error("invalid state: {0}")]
    InvalidState(ValidityReport),
    #[error("inconsistent synthetic spec: {0}")]
    InconsistentSpec(String),
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("checkpoint vocabulary hash does not match the loaded vocabulary")]
    VocabHashMismatch,
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
