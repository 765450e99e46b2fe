//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngramError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch { context: String, expected: String, got: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("point has nonpositive depth {depth} (behind camera)")]
    BehindCamera { depth: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("gradient check aborted: non-finite function value while perturbing {parameter}")]
    GradCheckNonFinite { parameter: String },

    #[error("training diverged at step {step}: {context}")]
    Divergence { step: usize, context: String },

    #[error("sampling produced a non-finite state at flow time {flow_time}")]
    SamplingDiverged { flow_time: f64 },

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("probe skipped: {0}")]
    ProbeSkipped(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EngramError>;
