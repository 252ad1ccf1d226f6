use thiserror::Error;

use crate::fitter::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("column {column} does not lie on the simplex (sum = {sum})")]
    Simplex { column: usize, sum: f64 },

    /// A linear predictor exceeded the exp() overflow guard.
    #[error("linear predictor {value} outside the admissible range [-{limit}, {limit}]")]
    NumericRange { value: f64, limit: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("formula has {found} category blocks but the response has {expected} categories")]
    Arity { expected: usize, found: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown covariate `{0}`")]
    Lookup(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("mode search did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        trace: Vec<IterationRecord>,
    },
}
