use thiserror::Error;

/// Errors raised by the transport, flow and sampling routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("ambiguous condition grouping: representatives {a} and {b} are within 2*tol")]
    AmbiguousGrouping { a: usize, b: usize },

    #[error("condition marginals of the two measures differ")]
    MarginalMismatch,

    #[error("no finite-cost assignment exists")]
    InfeasibleAssignment,

    #[error("transport problem infeasible: {0}")]
    InfeasibleTransport(String),

    #[error("unsupported exponent p = {0}; solvers accept p in {{1, 2}}")]
    UnsupportedExponent(f64),

    #[error("plan is not y-diagonal")]
    NotDiagonal,

    #[error("linear program failed: {0}")]
    LpFailure(String),

    #[error("Sinkhorn iterations did not converge (violation {violation:e} after {iterations} iterations)")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("velocity field is not a function at t = {t}: entries {a} and {b} collide with different velocities")]
    VelocityCollision { t: f64, a: usize, b: usize },

    #[error("no plan trajectory passes through the queried point at t = {t}")]
    OffTrajectory { t: f64 },

    #[error("batch of {size} exceeds the exact assignment limit of {limit}")]
    BatchTooLarge { size: usize, limit: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
