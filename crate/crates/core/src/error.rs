use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("target at distance {distance:.4} is beyond reach {reach:.4}")]
    Unreachable { distance: f64, reach: f64 },

    #[error("inverse kinematics did not converge (best position error {best_error:.3e})")]
    NoConvergence { best_error: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stage {stage} out of range for task with {stages} stages")]
    StageOutOfRange { stage: usize, stages: usize },

    #[error("scripted demo failed for task {task} seed {seed}: {reason}")]
    DemoFailed {
        task: String,
        seed: u64,
        reason: String,
    },

    #[error("unknown task `{0}` (valid: reach_target, push_block, open_drawer, open_lid)")]
    UnknownTask(String),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("replay holds {have} transitions, need {need}")]
    InsufficientReplay { have: usize, need: usize },

    #[error("no eligible records to sample")]
    NoEligible,

    #[error("malformed transition: {0}")]
    MalformedTransition(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
