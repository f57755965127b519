use thiserror::Error;

/// Errors raised by the regularisation engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid bounding box {0:?}: coordinates must be finite with x_min < x_max and y_min < y_max")]
    InvalidBox([f64; 4]),

    #[error("malformed taxonomy: {0}")]
    MalformedTaxonomy(String),

    #[error("unknown class {0}")]
    UnknownClass(String),

    #[error("invalid detection: {0}")]
    InvalidDetection(String),

    #[error("no candidate detections survive filtering")]
    EmptyCandidateSet,

    #[error("score {score} does not exceed background threshold {theta_bg}")]
    ScoreBelowThreshold { score: f64, theta_bg: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("iteration trace was not recorded for this run")]
    TraceDisabled,

    #[error("instance of size {n} exceeds the brute-force limit of {limit}")]
    InstanceTooLarge { n: usize, limit: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid scene spec: {0}")]
    SpecInvalid(String),

    #[error("parameter grid has {size} configurations, above the cap of {cap}")]
    GridTooLarge { size: usize, cap: usize },

    #[error("relabel targets {0} and {1} lie on one ancestor path")]
    AmbiguousTargets(String, String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
