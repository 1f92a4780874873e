use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ModelId, OptimizerConfig};
use crate::scheduler::{CycleOptions, DecayFamily, PruneSchedule};
use crate::sparsity::SparsityConfig;
use crate::strategy::StrategyConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub initial_rate: f64,
    pub family: DecayFamily,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            initial_rate: 0.2,
            family: DecayFamily::Cosine,
        }
    }
}

/// Step decay: the learning rate is multiplied by `factor` every
/// `every_batches` mini-batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub every_batches: u64,
}

impl Default for LrDecay {
    fn default() -> Self {
        Self {
            factor: 0.1,
            every_batches: 25_000,
        }
    }
}

impl LrDecay {
    pub fn rate_at(&self, base: f64, batches_seen: u64) -> f64 {
        if self.every_batches == 0 {
            return base;
        }
        base * self.factor.powi((batches_seen / self.every_batches) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 100 epochs, the full MNIST recipe.
    Mnist,
    /// 30 epochs with the learning-rate steps compressed to match.
    MnistDesk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Preset::Mnist),
            "mnist-desk" | "mnist_desk" => Ok(Preset::MnistDesk),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelId,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub sparsity: SparsityConfig,
    pub prune: PruneConfig,
    pub optimizer: OptimizerConfig,
    pub lr_decay: LrDecay,
    pub strategy: StrategyConfig,
    pub cycle: CycleOptions,
    /// Train without any masks or cycles.
    pub dense_baseline: bool,
    pub seeds: Vec<u64>,
    /// Seed of the fixed train/validation split, shared by all runs.
    pub split_seed: u64,
    pub validation_fraction: f64,
    pub max_train_examples: Option<usize>,
    pub max_test_examples: Option<usize>,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelId::LeNet300100,
            epochs: 100,
            batch_size: 100,
            eval_batch_size: 1000,
            sparsity: SparsityConfig::default(),
            prune: PruneConfig::default(),
            optimizer: OptimizerConfig::default(),
            lr_decay: LrDecay::default(),
            strategy: StrategyConfig::default(),
            cycle: CycleOptions::default(),
            dense_baseline: false,
            seeds: (0..10).collect(),
            split_seed: 0,
            validation_fraction: 0.1,
            max_train_examples: None,
            max_test_examples: None,
            data_dir: PathBuf::from("data/mnist"),
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Mnist => Self::default(),
            Preset::MnistDesk => Self {
                epochs: 30,
                lr_decay: LrDecay {
                    factor: 0.1,
                    every_batches: 25_000 * 30 / 100,
                },
                ..Self::default()
            },
        }
    }

    pub fn schedule(&self) -> PruneSchedule {
        PruneSchedule::new(self.prune.initial_rate, self.prune.family, self.epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.lr_decay.factor > 0.0 && self.lr_decay.factor.is_finite()) {
            return Err(Error::Config(format!("lr decay factor {}", self.lr_decay.factor)));
        }
        self.schedule().validate()?;
        self.optimizer.validate()?;
        self.sparsity.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
