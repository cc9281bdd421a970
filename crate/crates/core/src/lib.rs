pub mod error;
pub mod rng;
pub mod metrics;
pub mod world;
pub mod instruction;
pub mod dataset;
pub mod aligner;
pub mod agent;
pub mod training;
#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
