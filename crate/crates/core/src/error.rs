use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error(
        "incompatible composition: map {left} takes input of length {left_in} \
         but map {right} produces output of length {right_out}"
    )]
    IncompatibleChain {
        left: usize,
        left_in: usize,
        right: usize,
        right_out: usize,
    },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite: pivot {pivot:e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("conjugate gradient breakdown at iteration {iteration}: curvature {curvature:e}")]
    CgBreakdown { iteration: usize, curvature: f64 },

    #[error(
        "inner solve for probe {probe} did not converge: {iterations} iterations, \
         relative residual {residual:e}"
    )]
    InnerSolve {
        probe: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("line search failed after {evals} evaluations: bracket [{lo:e}, {hi:e}]")]
    LineSearch { evals: usize, lo: f64, hi: f64 },

    #[error("search direction is not a descent direction (g.d = {0:e})")]
    NotDescent(f64),

    #[error("forward model failure: {0}")]
    Forward(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}
