//! Numerical lab for the linear backward stochastic heat equation on an
//! exhaustive binomial scenario tree with a finite-difference grid in space.
//!
//! Every expectation is an exact finite sum over the tree, so martingale and
//! duality identities can be checked to rounding error.

pub mod control;
pub mod error;
pub mod estimates;
pub mod field;
pub mod grid;
pub mod harness;
pub mod ito;
pub mod semilinear;
pub mod solver;
pub mod toolkit;
pub mod tree;

pub use error::{Error, Result};
pub use field::{AdaptedField, LevelSlice};
pub use grid::Discretization;
pub use solver::{solve_linear, BspdeSolution, CoefficientSet, ProblemData};
pub use tree::{AdaptedRv, ScenarioTree};
