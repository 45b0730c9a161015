//! Wasserstein-regularized text matching: a feature projector, a matcher
//! and a weight-clipped critic trained adversarially, with the small tensor
//! engine, data handling and evaluation they need.

pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod numcore;
pub mod rng;
pub mod selftest;
pub mod trainer;
pub mod wdreg;

pub use error::{Error, ErrorClass, Result};
