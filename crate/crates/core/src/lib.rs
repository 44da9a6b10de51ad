//! Multi-view proficiency estimation at desk scale.

pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod harness;
pub mod lm;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod textio;

pub use error::{Error, Result};
