use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of domain: {0}")]
    IndexDomain(String),

    /// A spectrum failed Gårding cone membership; `index` is the first
    /// failing `j` and `value` is `σ_j` there.
    #[error("spectrum not admissible: sigma_{index} = {value:e}")]
    Admissibility { index: usize, value: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("stencil error: {0}")]
    Stencil(String),

    #[error("right-hand side not positive: {0}")]
    Positivity(String),

    /// A barrier condition of the prescribed-curvature problem fails.
    #[error("barrier condition violated: {0}")]
    Barrier(String),

    #[error("no admissible initial iterate: {0}")]
    Initialization(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
