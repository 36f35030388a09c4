//! Exact and minimax off-policy evaluation on finite MDPs.
//!
//! The crate computes every population quantity of the discounted OPE
//! problem in closed form on tabular models (q- and w-functions,
//! occupancies, the adjoint and backward Bellman operators, completeness
//! diagnostics, recovery constants and the efficiency bound), implements
//! the stabilized minimax estimators for q and w over linear classes with
//! closed-form saddle points, and ships a seeded Monte-Carlo harness that
//! measures convergence rates, CLT behavior, double robustness, and FQI
//! decay against those exact targets.

pub mod classes;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod mdp;
pub mod operators;
pub mod sampling;

pub use error::{OpeError, Result};
