//! Training, data, evaluation and the analysis experiments.

pub mod config;
pub mod data;
pub mod eval;
pub mod optim;
pub mod train;

pub use config::TrainConfig;
pub use data::{Dataset, Image};
pub use eval::{analyze_entropy, dump_features, rd_sweep, EvalReport};
pub use train::{train, TrainOutcome};
