//! Hessian quotient operators `σ_k/σ_l` composed with the transform
//! `U = θ tr(W) I − μ W + χ`.
//!
//! * [`symcone`]: elementary symmetric polynomials and Gårding cones.
//! * [`etacalc`]: the transform and its derivative calculus.
//! * [`gridpde`]: a finite-difference Dirichlet solver with estimate monitors.
//! * [`hypersurf`]: graph and radial-graph geometry in warped products.
//! * [`harness`]: randomized inequality sweeps over the cones.
//! * [`expr`]: the expression language used for right-hand sides.

mod error;
pub mod etacalc;
pub mod expr;
pub mod gridpde;
pub mod harness;
pub mod hypersurf;
pub mod par;
pub mod symcone;

pub use error::{Error, Result};
pub use etacalc::{EtaParams, OperatorEval};
pub use expr::Expr;
pub use par::Exec;
pub use symcone::{QuotientOp, Spectrum};
