//! Guide chapters compiled as doctests.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/tree.md")]
pub mod tree {}

#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/ito.md")]
pub mod ito {}

#[doc = include_str!("../../../book/src/estimates.md")]
pub mod estimates {}

#[doc = include_str!("../../../book/src/control.md")]
pub mod control {}

#[doc = include_str!("../../../book/src/semilinear.md")]
pub mod semilinear {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
