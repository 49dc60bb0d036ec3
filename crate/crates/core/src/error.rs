use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mesh has no UV coordinates")]
    MissingUvs,
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("unsupported view count {0} (expected 4 or 6)")]
    UnsupportedViewCount(usize),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("width {0} is incompatible with 3-axis rotary encoding (needs a multiple of 6)")]
    IncompatibleWidth(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("model parameters were never trained")]
    UntrainedModel,
    #[error("invalid step count {0}")]
    InvalidSteps(usize),
    #[error("loss diverged at step {step}")]
    DivergedLoss { step: usize },
    #[error("no cross-view correspondences")]
    NoCorrespondences,
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("checkpoint header mismatch: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
