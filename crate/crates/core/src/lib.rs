//! Contextual Plackett-Luce set decoding: a pairwise-interaction selection head with baselines, benchmarks and metrics.

pub mod baselines;
pub mod benchgen;
pub mod error;
pub mod experiment;
pub mod featurizer;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use model::{CplModel, DecodePath, LogitSource, SelectionState};
