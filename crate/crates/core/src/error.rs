use thiserror::Error;

/// Everything that can go wrong in a geometric computation or an experiment run.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("metric is not positive definite at {point:?} (smallest eigenvalue {min_eigenvalue:e})")]
    DegenerateMetric { point: Vec<f64>, min_eigenvalue: f64 },
    #[error("vertical frame is singular at {point:?}")]
    SingularVerticalFrame { point: Vec<f64> },
    #[error("point {point:?} is outside the chart domain")]
    OutsideDomain { point: Vec<f64> },
    #[error("vector is not horizontal (vertical norm {vertical_norm:e})")]
    NotHorizontal { vertical_norm: f64 },
    #[error("vectors are not an orthonormal pair (defect {defect:e})")]
    NotOrthonormal { defect: f64 },
    #[error("zero vector where a direction is required")]
    ZeroVector,
    #[error("trajectory left the chart domain at t = {t}")]
    LeftDomain { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepFailure { t: f64 },
    #[error("Newton shooting did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("boundary-value system is singular at t = {t} (smallest singular value {sigma:e})")]
    SingularBvp { t: f64, sigma: f64 },
    #[error("division by a vanishing Jacobi field at t = {t}")]
    DivisionNearZero { t: f64 },
    #[error("quadrature is under-resolved (relative change {relative_change:e})")]
    QuadratureUnderresolved { relative_change: f64 },
    #[error("eigensolver failed: {0}")]
    EigensolveFailure(String),
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("bad parameters: {0}")]
    BadParameters(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;
