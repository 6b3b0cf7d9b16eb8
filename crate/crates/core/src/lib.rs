//! A fine-grained scalable learned image codec.
//!
//! One encode produces a container whose scalable latent channels can be
//! dropped from the end at any channel boundary; every prefix decodes to a
//! complete image through one shared decoder.

pub mod checkpoint;
pub mod cli;
pub mod coder;
pub mod config;
pub mod entropy;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod objective;
pub mod transforms;

pub use config::{AblationCase, Metric, ModelConfig, WeightMode};
pub use error::{Error, Result};
pub use model::{DeepFgs, ForwardPass, Mode};
