pub mod contrast;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod graph;
pub mod harness;
pub mod rng;
pub mod samplers;
pub mod trainer;

pub use error::{Error, Result};
