//! Unavoidable sets for Green kernels of transient Markov processes.
//!
//! The crate is organised around capacity profiles (`kernels`), elementary
//! geometry (`geometry`), discrete equilibrium measures (`equilibrium`), the
//! certified Cantor construction (`cantor`), bubble configurations
//! (`champagne`), Monte Carlo hitting estimators (`hitting`) and covering
//! diagnostics (`hausdorff`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cantor;
pub mod champagne;
pub mod equilibrium;
pub mod error;
pub mod geometry;
pub mod hausdorff;
pub mod hitting;
pub mod kernels;
pub mod quad;
pub mod rng;
pub mod spatial;
pub mod stable;

pub use error::{Error, Result};
