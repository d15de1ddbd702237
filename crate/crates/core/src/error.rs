use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Numeric payloads are carried as `f64` regardless of the working scalar type.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("singular matrix: pivot {pivot:e} in column {column} below threshold {threshold:e}")]
    SingularMatrix { column: usize, pivot: f64, threshold: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("matrix is not symmetric positive definite ({0})")]
    NotSpd(String),
    #[error("evaluation produced non-finite values: {0}")]
    EvaluationFailure(String),
    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("coupling violation: {0}")]
    CouplingViolation(String),
    #[error("regularized flow matrix E + eps*I is singular for eps = {epsilon:e}")]
    StillSingular { epsilon: f64 },
    #[error("structure violation: {0}")]
    StructureViolation(String),
    #[error("file format: {0}")]
    FileFormat(String),
    #[error("trajectory has no recorded outputs")]
    MissingOutputs,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
