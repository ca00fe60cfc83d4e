//! Approximate dynamic programming for the operation of connected hydro
//! reservoirs.
//!
//! The crate is organised bottom-up:
//!
//! - [`lp`]: a dense bounded-variable simplex solver and the full-horizon
//!   (perfect-information) LP.
//! - [`model`]: reservoir systems (cascade and pumped tunnel networks), stage
//!   feasibility, profit and the stage LP builder.
//! - [`scenario`]: factored seasonal ARMA models and price/inflow scenario sets.
//! - [`adp`]: offline training of the affine post-decision value approximation
//!   and the online forward pass that uses it.
//! - [`analysis`]: convergence statistics, wait-and-see benchmarks, case
//!   comparisons and CSV reports.

pub mod adp;
pub mod analysis;
mod error;
pub mod lp;
pub mod model;
pub mod scenario;

pub use error::{Error, Result};
