use polysolve::SolveError;
use thiserror::Error;

/// Errors raised while reading, validating or evaluating a framework model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("cannot parse expression '{expr}': {reason}")]
    Expression { expr: String, reason: String },

    #[error("unknown vertex '{0}'")]
    UnknownVertex(String),

    #[error("body {index} has {count} vertices, at least 3 are required")]
    SmallBody { index: usize, count: usize },

    #[error("pin-joint references missing vertex '{0}'")]
    MissingPinVertex(String),

    #[error("dimension must be 2 or 3, got {0}")]
    Dimension(usize),

    #[error("edge {edge}: length must be positive, got {value}")]
    NonPositiveLength { edge: String, value: f64 },

    #[error("edge {0} has no length")]
    MissingLength(String),

    #[error("length given for '{0}', which is not an edge of the expanded framework")]
    StrayLength(String),

    #[error("degenerate simplex: {0}")]
    Degenerate(String),

    #[error("non-embeddable distances: {0}")]
    NotEmbeddable(String),

    #[error("Poisson ratio {0} outside [0, 1/2]")]
    PoissonRange(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },

    #[error("parameterization: {0}")]
    Parameterization(String),

    #[error("vertex '{0}' is not a body vertex, joint or bar end")]
    UnusedVertex(String),

    #[error("zero total weighted edge length")]
    ZeroWeight,

    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Top-level error for pipeline operations.
#[derive(Debug, Error)]
pub enum SnapError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Solver(#[from] SolveError),

    #[error("{0}")]
    Numerical(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SnapError> = std::result::Result<T, E>;
