use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("numerical failure in {backend} after {iterations} iterations: {reason}")]
    NumericalFailure {
        backend: &'static str,
        iterations: usize,
        reason: String,
    },
    #[error("malformed program: {0}")]
    Malformed(String),
}
