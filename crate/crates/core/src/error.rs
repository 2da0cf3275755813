use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("EOS cannot be advanced into a selection; it terminates decoding")]
    SelectingEos,
    #[error("candidate {0} is already selected")]
    AlreadySelected(usize),
    #[error("duplicate index {0}")]
    DuplicateIndex(usize),
    #[error("index {index} out of range for {k} candidates")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target {0} is already in the prefix")]
    TargetSelected(usize),
    #[error("forward cache does not match the gradients or networks: {0}")]
    CacheMismatch(String),
    #[error("invalid cluster count k={k} for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("offset ({dx}, {dy}) outside [0, {d})")]
    OffsetOutOfRange { dx: f64, dy: f64, d: f64 },
    #[error("empty prediction")]
    EmptyPrediction,
    #[error("non-finite loss at epoch {0}")]
    DivergedLoss(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
