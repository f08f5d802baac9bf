//! Bright-field CTC vs leukocyte classification benchmark.

pub mod augment;
pub mod data;
pub mod error;
pub mod experiments;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod source;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
