//! Minimum-norm approximate controls for a stochastic heat equation on a
//! binomial scenario tree, actuator-density optimization as a two-person
//! zero-sum game, and level-set rounding of the relaxed optimum to a
//! classical indicator actuator.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: 1D Dirichlet discretization, inner products, heat propagators;
//! - [`tree`]: the binomial scenario tree, adapted/terminal fields,
//!   conditional expectations and expectation norms;
//! - [`dynamics`]: forward controlled dynamics and the exactly-adjoint
//!   backward recursion, with a machine-precision duality identity;
//! - [`control`]: the convex terminal-datum functional, its accelerated
//!   proximal-gradient minimization, control synthesis, and optimality
//!   diagnostics;
//! - [`placement`]: the relaxed actuator-density game (capped-simplex
//!   projection, best responses, projected subgradient descent, Nash gaps);
//! - [`rounding`]: level-set rounding of a relaxed density to an indicator;
//! - [`diagnostics`]: empirical observability-constant estimation;
//! - [`verify`]: the desk-scale invariant suite behind the `verify`
//!   command.
//!
//! Per-level tree sweeps are data-parallel (rayon behind the `parallel`
//! feature, on by default); every reduction uses a fixed pairwise order, so
//! results are bit-identical for any thread count. `STOCHACT_THREADS` caps
//! the internal pool.

pub mod error;
pub mod par;

pub mod grid;
pub mod tree;

pub mod dynamics;
pub mod control;
pub mod placement;
pub mod rounding;
pub mod diagnostics;
pub mod verify;

pub use error::{Error, Result};
