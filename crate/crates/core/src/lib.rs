pub mod attribution;
pub mod baselines;
pub mod citest;
pub mod cli;
pub mod dataset;
pub mod discovery;
pub mod error;
pub mod feature;
pub mod linalg;
pub mod pipeline;
pub mod regression;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use feature::{Feature, FeatureRanking};
