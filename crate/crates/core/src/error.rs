use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Dimension is not a positive multiple of four, or shapes disagree.
    #[error("invalid dimension: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("slot {slot} out of range for rank {rank}")]
    SlotOutOfRange { slot: usize, rank: usize },

    #[error("operation needs rank >= {needed}, tensor has rank {rank}")]
    RankTooSmall { needed: usize, rank: usize },

    #[error("slot variance mismatch: {0}")]
    Variance(String),

    /// The metric is (numerically) degenerate; every downstream formula needs g^{-1}.
    #[error("degenerate metric: |det g| = {det:e} below threshold {threshold:e}")]
    DegenerateMetric { det: f64, threshold: f64 },

    #[error("metric is not symmetric (max |g - g^T| = {0:e})")]
    NonSymmetricMetric(f64),

    #[error("wrong signature: expected ({expected_p},{expected_q}), found ({found_p},{found_q})")]
    Signature {
        expected_p: usize,
        expected_q: usize,
        found_p: usize,
        found_q: usize,
    },

    #[error("structures are not NH-compatible: max residual {residual:e} > {tol:e}")]
    NotCompatible { residual: f64, tol: f64 },

    #[error("not an almost hypercomplex triple: max residual {residual:e} > {tol:e}")]
    NotHypercomplex { residual: f64, tol: f64 },

    #[error("structure index must be 1, 2 or 3, got {0}")]
    InvalidAlpha(usize),

    #[error("point {point:?} is within {margin:e} of the domain boundary on axis {axis}")]
    TooCloseToBoundary {
        point: Vec<f64>,
        axis: usize,
        margin: f64,
    },

    /// A user-supplied field could not be evaluated (parse-free runtime failure).
    #[error("field evaluation failed: {0}")]
    Field(String),

    #[error("invalid warp factor: {0}")]
    InvalidWarp(String),

    #[error("Lie form does not match the trace of F: residual {residual:e} > {tol:e}")]
    InconsistentTheta { residual: f64, tol: f64 },

    #[error("input is not quaternionic Kähler: extraction residual {residual:e} > {tol:e}")]
    NotQuaternionicKahler { residual: f64, tol: f64 },

    #[error("precondition {label} fails: residual {residual:e} > {tol:e}")]
    Precondition {
        label: String,
        residual: f64,
        tol: f64,
    },

    #[error("dimension {dim} exceeds the supported maximum {max} for this computation")]
    TooLarge { dim: usize, max: usize },

    #[error("{0}")]
    Other(String),
}
