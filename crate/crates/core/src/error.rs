//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("unreadable metadata table {path}: {reason}")]
    Metadata { path: PathBuf, reason: String },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("class {class} has {patients} patient(s), fewer than the {required} split buckets it must populate")]
    SplitInfeasible {
        class: String,
        patients: usize,
        required: usize,
    },

    #[error("class {0} has no positive training samples; weights are degenerate")]
    DegenerateWeights(String),

    #[error("label index {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("class {class} has {available} training image(s), fewer than the {per_batch} required per batch")]
    ClassExhausted {
        class: String,
        available: usize,
        per_batch: usize,
    },

    #[error("batch size {batch_size} is not a positive multiple of the sampling ratio sum {ratio_sum}")]
    BatchSizeIncompatible { batch_size: usize, ratio_sum: usize },

    #[error("checkpoint parameter mismatch:\n{}", .0.join("\n"))]
    ParamMismatch(Vec<String>),

    #[error("checkpoint declares {found} classes but {expected} were requested")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("malformed checkpoint {path}: {reason}")]
    CheckpointFormat { path: PathBuf, reason: String },

    #[error("pretrained weights not found at {path}; download the CheXNet release, convert it to safetensors and point `model.pretrained_weights` at the file (see README)")]
    PretrainedWeightsMissing { path: PathBuf },

    #[error("pretrained weights {path} hash mismatch: expected {expected}, got {actual}")]
    WeightsHashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("non-finite loss in stage {stage}, epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        stage: u8,
        epoch: usize,
        batch: usize,
    },

    #[error("validation set is empty")]
    EmptyValidationSet,

    #[error("AUROC undefined: need at least one positive and one negative sample")]
    AurocUndefined,

    #[error("prediction matrix is empty")]
    EmptyPredictions,

    #[error("scoring failed on mask {index}: {reason}")]
    MaskScoringFailed { index: usize, reason: String },

    #[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("plot rendering failed: {0}")]
    Plot(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
