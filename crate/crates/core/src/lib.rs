pub mod biasing;
pub mod cli;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod kv;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
