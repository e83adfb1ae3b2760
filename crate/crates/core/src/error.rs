use thiserror::Error;

pub type Result<T> = std::result::Result<T, CrwError>;

#[derive(Debug, Error)]
pub enum CrwError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid rank model: {0}")]
    InvalidModel(String),

    #[error("exact convolution supports at most {cap} tests (got {m}); use the normal-approx or grid method")]
    Capacity { m: usize, cap: usize },

    #[error("delta solver failed: {reason} (best residual {best_residual:e})")]
    SolverFailure { reason: String, best_residual: f64, trace: Vec<(f64, f64)> },

    #[error("weight root-finding failed at rank {rank}: {reason}")]
    RankSolverFailure { rank: usize, reason: String },

    #[error("non-finite quadrature value: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("missing truth labels: {0}")]
    MissingLabels(String),
}

impl CrwError {
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, CrwError::SolverFailure { .. } | CrwError::RankSolverFailure { .. })
    }
}
