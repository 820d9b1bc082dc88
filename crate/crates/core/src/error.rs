use thiserror::Error;

/// Errors raised across the modelling, synthesis and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse case: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("branch {from}-{to} has zero series reactance")]
    ZeroReactance { from: usize, to: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("singular jacobian in {0}")]
    SingularJacobian(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("LMI problem infeasible: {0}")]
    Infeasible(String),

    #[error("SDP solver failed: {0}")]
    Solver(String),

    #[error("integration diverged at t = {time:.4} s: {reason}")]
    Diverged { time: f64, reason: String },

    #[error("unstabilizable pair in Riccati design: {0}")]
    Unstabilizable(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
