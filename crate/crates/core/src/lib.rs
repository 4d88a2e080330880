//! Deep first-order-system least-squares solvers for obstacle problems.
//!
//! The crate builds constraint-satisfying lifts of small dense networks,
//! evaluates the least-squares functionals by Monte-Carlo collocation and
//! trains them with ADAM. It also ships step-activated networks that
//! represent simplex characteristic functions exactly, and independent
//! verification oracles.

pub mod admissible;
pub mod error;
pub mod geometry;
pub mod hnn;
pub mod netcore;
pub mod optim;
pub mod oracle;
pub mod problems;
pub mod stats;

pub use error::{Error, Result};
