use thiserror::Error;

/// Errors surfaced by geometry, kernel, target, and experiment code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("points live on different manifolds ({0} vs {1})")]
    ManifoldMismatch(String, String),
    #[error("tangent vector is based at a different point than the one supplied")]
    BaseMismatch,
    #[error("tangent components have wrong length (expected {expected}, got {got})")]
    TangentLength { expected: usize, got: usize },
    #[error("sphere tangent is not orthogonal to its base point (|<x,v>| = {dot:e})")]
    TangentNotOrthogonal { dot: f64 },
    #[error("cannot normalize near-zero sphere vector (norm = {norm:e})")]
    DegenerateSphereVector { norm: f64 },
    #[error("log map undefined at or beyond the injectivity radius (rho = {rho})")]
    OutsideInjectivityRadius { rho: f64 },
    #[error("antipodal points have no unique logarithm")]
    AntipodalPoints,
    #[error("heat kernel requires t > 0 (got {t})")]
    NonPositiveTime { t: f64 },
    #[error("sphere heat kernel series ill-conditioned below t = {t_min} (got {t})")]
    SphereTimeTooSmall { t: f64, t_min: f64 },
    #[error("mixture target has no components")]
    EmptyMixture,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("estimator needs at least {need} samples (got {got})")]
    TooFewSamples { need: usize, got: usize },
    #[error("kernel density estimation supported for dimension <= {max} (got {got})")]
    DimensionTooLarge { max: usize, got: usize },
    #[error("grid densities have mismatched shapes")]
    GridMismatch,
    #[error("log-linear fit needs at least 3 usable points (got {got})")]
    TooFewPoints { got: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
