pub mod dsp;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod specaug;
pub mod tensor;

pub use error::{Error, Result};
