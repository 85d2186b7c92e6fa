pub mod cells;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod optimizer;
pub mod parallel;
pub mod params;
pub mod synthetic;
pub mod trainer;
pub mod treebank;

pub use error::{Error, Result};
