use thiserror::Error;

/// Errors raised across the simulation, control and learning stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CdprError {
    #[error("degenerate configuration: cable {cable} has length {length:e} m")]
    DegenerateConfiguration { cable: usize, length: f64 },

    #[error("no nonnegative tensions hold the end effector (residual {residual:e} N)")]
    InfeasibleEquilibrium { residual: f64 },

    #[error("action out of bounds: {0}")]
    ActionOutOfBounds(String),

    #[error("action outside the head's support: {0}")]
    ActionOutOfSupport(String),

    #[error("step called before reset")]
    StepBeforeReset,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("trajectory leaves the workspace at t = {time} s")]
    TrajectoryLeavesWorkspace { time: f64 },

    #[error("every gain candidate diverged")]
    AllCandidatesDiverged,

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    InsufficientReplay { have: usize, need: usize },

    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("policy file: {0}")]
    PolicyFile(String),

    #[error("policy file: format version {found}, this build reads version {expected}")]
    PolicyVersion { found: u32, expected: u32 },

    #[error("policy file: truncated payload, header declares {expected} parameters but found {found}")]
    PolicyTruncated { expected: usize, found: usize },

    #[error("policy file: dimension mismatch in `{field}`: header says {header}, data has {actual}")]
    PolicyDimension {
        field: String,
        header: usize,
        actual: usize,
    },

    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, CdprError>;

impl CdprError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CdprError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
