pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod filtering;
pub mod harness;
pub mod math;
pub mod oracles;
pub mod policy;
pub mod rng;
pub mod training;
pub mod world;

pub use error::{Error, Result};
