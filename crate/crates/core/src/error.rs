use thiserror::Error;

/// Errors produced by the model, the inference engines and the file formats.
#[derive(Debug, Error)]
pub enum GcmError {
    #[error("part {part} has no size/orientation but full feature mode was requested")]
    MissingField { part: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("variances must be strictly positive (got {0})")]
    InvalidVariance(f64),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix row/column {index} has no positive entry; no doubly stochastic scaling exists")]
    StructurallyInfeasible { index: usize },

    #[error("sinkhorn did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate basis (|det B| = {det:e})")]
    DegenerateBasis { det: f64 },

    #[error("degenerate template: all parts coincide")]
    CoincidentParts,

    #[error("degenerate scale: every pose has (near) zero scale")]
    DegenerateScale,

    #[error("no observed parts to condition on")]
    EmptyObservation,

    #[error("permutation enumeration refused for N = {n} (limit {limit})")]
    TooManyParts { n: usize, limit: usize },

    #[error("scene has {points} points but the templates only provide {slots} slots")]
    TooManyPoints { points: usize, slots: usize },

    #[error("partitions are over different universes ({0} vs {1})")]
    UniverseMismatch(usize, usize),

    #[error("at least two elements are required (got {0})")]
    TooFewElements(usize),

    #[error("unknown method `{0}` (expected gcm-ds, gcm-gmm or ransac)")]
    UnknownMethod(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GcmError>;
