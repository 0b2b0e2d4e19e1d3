use thiserror::Error;

/// Errors raised by the library. The CLI maps each variant onto a stable
/// exit code.
#[derive(Debug, Error)]
pub enum WaveError {
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mode {0} is not in the kernel set")]
    NotInKernel(u64),
    #[error("boundary value problem not solvable: {0}")]
    Solvability(String),
    #[error("newton iteration diverged after {iterations} iterations (residual {residual:.3e})")]
    Divergence { iterations: usize, residual: f64 },
    #[error("jacobian is numerically singular (reciprocal condition {rcond:.3e}); fold or branch point")]
    SingularJacobian { rcond: f64 },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WaveError>;
