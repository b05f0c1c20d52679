use thiserror::Error;

/// Failures reported by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected} components, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid mass system: {0}")]
    InvalidSystem(String),

    #[error("configuration has a collision between bodies {i} and {j}")]
    Collision { i: usize, j: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bodies {i} and {j} approached to {distance:.3e} at t = {t:.6e}")]
    CollisionApproach { t: f64, i: usize, j: usize, distance: f64 },

    #[error("step size underflow at t = {t:.6e}")]
    StepUnderflow { t: f64 },

    #[error("step budget exhausted at t = {t:.6e}")]
    StepLimit { t: f64 },

    #[error("motion not diagnosed hyperbolic: {0}")]
    NotHyperbolic(String),

    #[error("jacobian is numerically singular")]
    SingularJacobian,

    #[error("newton iteration stagnated at residual {residual:.3e}")]
    Stagnation { residual: f64 },

    #[error("iterate left the uniqueness ball: |v - a| = {distance:.3e} > delta = {delta:.3e}")]
    LeftBall { distance: f64, delta: f64 },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("kepler: {0}")]
    Kepler(String),

    #[error("rays have different limit shapes (gap {0:.3e})")]
    LimitShapeMismatch(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
