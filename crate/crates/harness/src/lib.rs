//! Experiment plumbing around `cyclicnet`: configs, a synthetic
//! rotation-invariant classification task, training, evaluation and
//! checkpoints. The `cyclicnet` binary is a thin CLI over this crate.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod train;

pub use config::{DataSource, ExperimentConfig, TrainConfig};
pub use data::{Dataset, Orientation, Split, SyntheticTaskSpec};
pub use error::{HarnessError, Result};
pub use eval::{evaluate, EvalMetrics};
pub use train::{train, MetricsRow, TrainOutcome};
