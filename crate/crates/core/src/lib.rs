//! Monte Carlo power analysis for cross-validated classifiers, and a
//! closed-form sample-size calculator built from its results.

pub mod calc;
pub mod cli;
pub mod cv;
pub mod datagen;
pub mod error;
pub mod featsel;
pub mod fit;
pub mod mc;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
