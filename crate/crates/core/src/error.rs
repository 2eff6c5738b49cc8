use alloc::string::String;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid depth {0}: must be positive")]
    InvalidDepth(f32),
    #[error("point is behind the camera (camera-frame z = {0})")]
    BehindCamera(f32),
    #[error("cannot fit a bounding box to an empty region")]
    EmptyRegion,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("view {0} has no feature map")]
    MissingFeatures(usize),
    #[error("mask provider failed: {0}")]
    ProviderFailure(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("embedding row {row} has norm {norm}, not unit")]
    NonUnitEmbedding { row: usize, norm: f32 },
    #[error("duplicate query label {0:?}")]
    DuplicateLabel(String),
    #[error("query set: {0}")]
    InvalidQuerySet(String),
    #[error("invalid gaussian cloud: {0}")]
    InvalidCloud(String),
    #[error("no fused points to train on")]
    EmptyCorpus,
    #[error("latent space is empty")]
    EmptyLatent,
    #[error("render output carries no forward state")]
    MissingForwardState,
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
