//! The experiment document: `{"model": .., "train": .., "data": ..}`.

use std::path::{Path, PathBuf};

use cyclicnet::nn::{AdamConfig, Architecture, LossKind, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::data::SyntheticTaskSpec;
use crate::error::{HarnessError, Result};

fn default_batch() -> usize {
    32
}

fn default_lr() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Images per step before slicing. A sliced model processes
    /// `batch_size * |G|` pathway samples per step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Epochs at which the learning rate drops tenfold.
    #[serde(default)]
    pub milestones: Vec<usize>,
    /// Rotate each training image by a random multiple of 90 degrees.
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch(),
            epochs: 1,
            base_lr: default_lr(),
            adam: AdamConfig::default(),
            milestones: Vec::new(),
            augment: false,
            seed: 0,
        }
    }
}

/// Either a directory written by `gen-data` or an inline task generated on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Dir {
        dir: PathBuf,
    },
    Synthetic(SyntheticTaskSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: Option<DataSource>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads the document; a relative data `dir` resolves against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        if let Some(DataSource::Dir { dir }) = &mut cfg.data {
            if dir.is_relative() {
                if let Some(parent) = path.parent() {
                    *dir = parent.join(&*dir);
                }
            }
        }
        Ok(cfg)
    }

    /// Validates the model alone.
    pub fn architecture(&self) -> Result<Architecture> {
        Ok(self.model.validate()?)
    }

    /// Checks that the training settings suit a classification task of `task`.
    pub fn check_training(&self, arch: &Architecture, task: &SyntheticTaskSpec) -> Result<()> {
        let mut problems = Vec::new();
        let t = &self.train;
        if t.batch_size == 0 {
            problems.push("train.batch_size must be positive".to_string());
        }
        if t.epochs == 0 {
            problems.push("train.epochs must be positive".to_string());
        }
        if !(t.base_lr.is_finite() && t.base_lr > 0.0) {
            problems.push("train.base_lr must be a positive number".to_string());
        }
        if t.milestones.windows(2).any(|w| w[0] >= w[1]) {
            problems.push("train.milestones must be strictly increasing".to_string());
        }
        if self.model.loss != LossKind::CrossEntropy {
            problems.push("the synthetic task is classification and needs loss \"cross_entropy\"".to_string());
        }
        let input = arch.input_shape();
        if input.channels != 1 || input.height != task.size {
            problems.push(format!("model input must be 1x{0}x{0} to match the data, got {input}", task.size));
        }
        let out = arch.output_shape();
        if out.channels != task.classes {
            problems.push(format!("model has {} outputs but the task has {} classes", out.channels, task.classes));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(cyclicnet::Error::Validation(problems).into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {
            "input": {"channels": 1, "size": 8},
            "layers": [
                {"kind": "slice"},
                {"kind": "conv", "filters": 8, "kernel": 3, "padding": "same"},
                {"kind": "relu"},
                {"kind": "flatten"},
                {"kind": "dense", "units": 10},
                {"kind": "pool", "function": "mean", "realign": false}
            ],
            "loss": "cross_entropy"
        },
        "train": {"epochs": 2, "seed": 4},
        "data": {"size": 8, "classes": 10, "train": 20, "val": 10, "test": 10, "noise": 0.1, "seed": 1}
    }"#;

    #[test]
    fn minimal_config_is_accepted() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.train.batch_size, 32);
        let arch = cfg.architecture().unwrap();
        let Some(DataSource::Synthetic(task)) = &cfg.data else { panic!("inline task expected") };
        cfg.check_training(&arch, task).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("\"epochs\": 2", "\"epochs\": 2, \"momentum\": 0.9");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(HarnessError::Config(_))));
        let bad = MINIMAL.replace("\"relu\"}", "\"relu\", \"leak\": 0.1}");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let bad = MINIMAL.replace("\"kind\": \"relu\"", "\"kind\": \"gelu\"");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn ordering_violations_are_reported() {
        let two_slices = MINIMAL.replace("{\"kind\": \"relu\"}", "{\"kind\": \"slice\"}");
        let err = ExperimentConfig::parse(&two_slices).unwrap().architecture().unwrap_err();
        assert!(err.to_string().contains("slice"), "{err}");

        let conv_after_realign = MINIMAL.replace(
            "{\"kind\": \"relu\"},",
            "{\"kind\": \"pool\", \"realign\": true}, {\"kind\": \"conv\", \"filters\": 2, \"kernel\": 3},",
        );
        let err = ExperimentConfig::parse(&conv_after_realign).unwrap().architecture().unwrap_err();
        assert!(err.to_string().contains("equivariance"), "{err}");
    }

    #[test]
    fn class_count_must_match_outputs() {
        let cfg = ExperimentConfig::parse(&MINIMAL.replace("\"classes\": 10", "\"classes\": 4")).unwrap();
        let arch = cfg.architecture().unwrap();
        let Some(DataSource::Synthetic(task)) = &cfg.data else { unreachable!() };
        assert!(cfg.check_training(&arch, task).is_err());
    }
}
