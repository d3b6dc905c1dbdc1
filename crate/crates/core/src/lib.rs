//! Long-tailed classification with out-of-distribution detection, using
//! mixed samples of frequent and rare classes as pseudo-outliers.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod moe;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
