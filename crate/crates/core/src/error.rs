use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e}, norm {norm:e})")]
    NotPsd { min_eigenvalue: f64, norm: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("hessian is singular or ill-conditioned (reciprocal condition {rcond:e})")]
    SingularHessian { rcond: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("design is rank deficient: null space has dimension {null_dim}")]
    RankDeficient { null_dim: usize },
    #[error("optimizer did not converge (final gradient norm {grad_norm:e})")]
    NonConvergence { grad_norm: f64 },
    #[error("optimum on the boundary: persistence beta1+beta2 = {persistence}")]
    BoundaryOptimum { persistence: f64 },
    #[error("argument outside domain: {0}")]
    DomainError(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("exponent overflow guard binding at the optimum")]
    Overflow,
    #[error("I - theta1*G is not invertible for theta1 = {theta1}")]
    NonInvertible { theta1: f64 },
    #[error("intervals were recorded at level {recorded}, requested {requested}")]
    LevelMismatch { recorded: f64, requested: f64 },
    #[error("{:.0}% of first-stage redraws hit the parameter bounds", hit_fraction * 100.0)]
    ConstraintExhausted { hit_fraction: f64 },
    #[error("conditional variance is unavailable for this model")]
    VarianceUnavailable,
    #[error("{failed} of {reps} replications failed, above the 1% budget")]
    ReplicationBudget { failed: usize, reps: usize },
    #[error("{path}: line {line}{}: {message}", column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Schema {
        path: String,
        line: u64,
        column: Option<String>,
        message: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPsd { .. } => "NotPSD",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::SingularHessian { .. } => "SingularHessian",
            Error::EmptySample => "EmptySample",
            Error::SizeMismatch(_) => "SizeMismatch",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::BoundaryOptimum { .. } => "BoundaryOptimum",
            Error::DomainError(_) => "DomainError",
            Error::OutOfRange(_) => "OutOfRange",
            Error::Overflow => "Overflow",
            Error::NonInvertible { .. } => "NonInvertible",
            Error::LevelMismatch { .. } => "LevelMismatch",
            Error::ConstraintExhausted { .. } => "ConstraintExhausted",
            Error::VarianceUnavailable => "VarianceUnavailable",
            Error::ReplicationBudget { .. } => "ReplicationBudget",
            Error::Schema { .. } => "SchemaError",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
