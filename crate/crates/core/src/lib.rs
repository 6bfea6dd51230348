pub mod adversary;
pub mod archive;
pub mod autograd;
pub mod backbones;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod detail_loss;
pub mod error;
pub mod generators;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod reenactor;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
