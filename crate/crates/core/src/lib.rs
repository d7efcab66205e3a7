pub mod classifier;
pub mod cli;
pub mod dataset;
pub mod defense;
pub mod sampler;
pub mod synth;
pub mod error;
pub mod nn;
pub mod trace;
pub mod util;

pub use error::{Error, Result};
