//! Lasso regularization paths with certified approximate continuation.
//!
//! The path starts at `lambda_max` with `beta = 0` and decreases the
//! regularization level under a policy that controls the duality gap at the
//! target. Each step solves a working-set subproblem warm-started from the
//! previous iterate, then corrects it on the full problem with gap-safe
//! screening until the global duality gap certificate holds.

pub mod active_control;
pub mod cli;
pub mod continuation;
pub mod data_io;
pub mod error;
pub mod problem;
pub mod screening;
pub mod solver;
pub mod validation;

pub use error::{Error, Result};
pub use problem::{DesignMatrix, PrimalDualState, Problem};
