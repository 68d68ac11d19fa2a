use thiserror::Error;

/// Errors produced by the geometry, estimation and I/O layers.
#[derive(Debug, Error)]
pub enum PtzError {
    #[error("point has non-positive depth in the camera frame")]
    BehindCamera,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("inconsistent minimal sample: residual {residual:.3e} px")]
    Inconsistent { residual: f64 },
    #[error("normal equations are singular")]
    SingularNormalEquations,
    #[error("not enough inliers: found {found}, need {required}")]
    NotEnoughInliers { found: usize, required: usize },
    #[error("tracking lost: {0}")]
    TrackingLost(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("initialization failed: {0}")]
    InitializationFailed(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = PtzError> = std::result::Result<T, E>;
