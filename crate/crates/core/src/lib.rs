pub mod bayes;
pub mod cholesky;
pub mod config;
pub mod dense;
pub mod discretise;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod oracle;
pub mod rng;
pub mod samplers;
pub mod sparse;
pub mod splitting;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
