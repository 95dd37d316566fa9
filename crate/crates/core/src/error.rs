use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("measure is not a probability: {0}")]
    NonProbabilityMeasure(String),
    #[error("metric violation: {0}")]
    MetricViolation(String),
    #[error("duplicate point id `{0}`")]
    DuplicateId(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("functions or forms live on different spaces")]
    SpaceMismatch,
    #[error("ambient dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("point outside the domain: {0}")]
    OutsideDomain(String),
    #[error("resolvent ill-posed: tau = {tau} with convexity modulus {lambda}")]
    IllPosed { tau: f64, lambda: f64 },
    #[error("sphere invariance broken at step {step}: drift {drift:.3e} exceeds {bound:.3e}")]
    InvarianceBroken { step: usize, drift: f64, bound: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("basis is not orthonormal (gram defect {0:.3e})")]
    NotOrthonormal(f64),
    #[error("invalid k = {k} for a space of dimension {dim}")]
    InvalidK { k: usize, dim: usize },
    #[error("energy form is not quadratic")]
    NotQuadratic,
    #[error("empty set")]
    EmptySet,
    #[error("transferred vector collapsed at index {index}: norm {norm:.4} <= {threshold:.4}")]
    NormCollapse { index: usize, norm: f64, threshold: f64 },
    #[error("energy cap violated: {0}")]
    Unbounded(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
