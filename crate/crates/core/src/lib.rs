//! Optimal control of nondegenerate controlled diffusions on grids.
//!
//! The crate solves the dynamic programming equations of four cost criteria
//! (finite horizon, discounted, ergodic and exit time), extracts minimizing
//! selectors, smooths them by convolution with a compactly supported bump,
//! and measures how much cost the smoothing gives up, both by PDE policy
//! evaluation and by Monte Carlo simulation of the controlled SDE.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod field;
pub mod grid;
pub mod hjb;
pub mod policy;
pub mod sde;
mod textio;

pub use error::{Error, Result};
