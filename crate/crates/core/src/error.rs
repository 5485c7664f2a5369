use crate::qp::QpError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown problem `{0}`")]
    UnknownProblem(alloc::string::String),
    #[error("problem `{name}` requires n = {expected}, got {got}")]
    FixedDimension {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("problem `{name}` requires n >= {min}, got {got}")]
    DimensionTooSmall {
        name: &'static str,
        min: usize,
        got: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite objective or gradient value at outer iteration {k}")]
    NonFinite { k: usize },
    #[error("linearization error {value:e} is negative beyond rounding; objective is not convex or its gradient is wrong")]
    NegativeLinearizationError { value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Qp(#[from] QpError),
}
