use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::idx::{Dataset, Mnist};
use crate::checkpoint::{RngState, TrainState};
use crate::error::{Error, Result};
use crate::network::{dense_sgd_step, momentum_update, sgd_step, ModelId, SparseNetwork};
use crate::scheduler::{sparse_momentum_step, CycleReport};
use crate::sparsity::apply_initial_masks;
use crate::strategy::{select_strategy, StrategyConfig};

const STREAM_INIT: u64 = 0;
const STREAM_GROWTH: u64 = 1;
const STREAM_SHUFFLE: u64 = 1 << 32;

/// Independent ChaCha8 stream for one purpose of one run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index split into `(train, validation)`; validation gets `round(n · fraction)`
/// examples drawn with `seed`. Both halves are sorted.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).min(n);
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Fixed 90/10 train/validation split.
pub fn split_train_validation(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if data.is_empty() {
        return Err(Error::Input("cannot split an empty dataset".into()));
    }
    let (train, val) = split_indices(data.len(), 0.1, seed);
    Ok((data.select(&train)?, data.select(&val)?))
}

/// Train, validation and test sets as used by one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    pub fn prepare(mnist: &Mnist, cfg: &ExperimentConfig) -> Result<Self> {
        let (train_idx, val_idx) = split_indices(mnist.train.len(), cfg.validation_fraction, cfg.split_seed);
        let mut train = mnist.train.select(&train_idx)?;
        let mut validation = mnist.train.select(&val_idx)?;
        if let Some(n) = cfg.max_train_examples {
            train = train.take(n)?;
            validation = validation.take((n / 9).max(1))?;
        }
        let test = match cfg.max_test_examples {
            Some(n) => mnist.test.take(n)?,
            None => mnist.test.clone(),
        };
        Ok(Self {
            train,
            validation,
            test,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub prune_rate: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_error: f64,
    pub densities: Vec<f64>,
    pub total_active: usize,
    pub train_seconds: f64,
    pub cycle_seconds: f64,
    pub cycle: Option<CycleReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, batch: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub model: ModelId,
    pub strategy: StrategyConfig,
    pub density: f64,
    pub dense_baseline: bool,
    pub total_weights: usize,
    pub epochs: Vec<EpochRecord>,
    /// Evaluated once, after the last epoch.
    pub test_error: Option<f64>,
    pub test_loss: Option<f64>,
    pub status: RunStatus,
}

impl RunRecord {
    /// Zeroes wall-clock fields so two records can be compared for equality.
    pub fn without_timings(mut self) -> Self {
        for e in &mut self.epochs {
            e.train_seconds = 0.0;
            e.cycle_seconds = 0.0;
        }
        self
    }
}

/// Hooks called from inside [`train_with`].
pub trait TrainObserver {
    fn on_start(&mut self, _net: &SparseNetwork) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _net: &SparseNetwork, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub network: SparseNetwork,
    pub state: TrainState,
}

/// Builds the initial network for `seed`: Xavier weights, then masks.
pub fn initial_network(cfg: &ExperimentConfig, seed: u64) -> Result<SparseNetwork> {
    let mut rng = stream_rng(seed, STREAM_INIT);
    let mut net = cfg.model.build(&mut rng);
    if !cfg.dense_baseline {
        apply_initial_masks(&mut net, &cfg.sparsity, &mut rng)?;
    }
    Ok(net)
}

pub fn train(cfg: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<RunRecord> {
    Ok(train_with(cfg, data, seed, &mut (), None)?.record)
}

/// Full training run. With `resume`, continues from a checkpointed network
/// and state; the record then holds only the epochs run here.
pub fn train_with(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    seed: u64,
    observer: &mut dyn TrainObserver,
    resume: Option<(SparseNetwork, TrainState)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let strategy = select_strategy(cfg.strategy);
    let opt = cfg.optimizer.clone();

    let (mut net, mut growth_rng, start_epoch, mut batches_seen) = match resume {
        Some((net, state)) => (net, state.rng.restore(), state.epoch as usize, state.batches_seen),
        None => (initial_network(cfg, seed)?, stream_rng(seed, STREAM_GROWTH), 0, 0),
    };
    observer.on_start(&net)?;

    let mut record = RunRecord {
        seed,
        model: cfg.model,
        strategy: cfg.strategy,
        density: if cfg.dense_baseline { 1.0 } else { cfg.sparsity.density },
        dense_baseline: cfg.dense_baseline,
        total_weights: net.total_weights(),
        epochs: Vec::new(),
        test_error: None,
        test_loss: None,
        status: RunStatus::Completed,
    };
    let mut state = TrainState {
        epoch: start_epoch as u64,
        batches_seen,
        learning_rate: cfg.lr_decay.rate_at(opt.learning_rate, batches_seen),
        prune_rate: 0.0,
        rng: RngState::capture(&growth_rng),
    };

    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in start_epoch..cfg.epochs {
        let t0 = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream_rng(seed, STREAM_SHUFFLE | epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut lr = cfg.lr_decay.rate_at(opt.learning_rate, batches_seen);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            lr = cfg.lr_decay.rate_at(opt.learning_rate, batches_seen);
            let step_cfg = crate::network::OptimizerConfig {
                learning_rate: lr,
                ..opt.clone()
            };
            let batch = data.train.select(chunk)?;
            let loss = net
                .forward(&batch.images)
                .and_then(|pass| net.backward(&pass, &batch.labels));
            let loss = match loss {
                Ok(l) => l,
                Err(Error::Numeric(message)) => {
                    record.status = RunStatus::Diverged { epoch, batch: b, message };
                    return Ok(TrainOutcome {
                        record,
                        network: net,
                        state,
                    });
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss.value;
            batches += 1;
            for ((s, gw), gb) in net.params_mut().zip(&loss.weight_grads).zip(&loss.bias_grads) {
                if cfg.dense_baseline {
                    dense_sgd_step(s, gw, gb, &step_cfg)?;
                } else {
                    momentum_update(s, gw, &step_cfg)?;
                    sgd_step(s, gw, gb, &step_cfg)?;
                }
            }
            batches_seen += 1;
        }
        let train_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let prune_rate = schedule.rate_at(epoch)?;
        let cycle = if cfg.dense_baseline {
            None
        } else {
            Some(sparse_momentum_step(
                &mut net,
                &schedule,
                epoch,
                &strategy,
                &cfg.cycle,
                &mut growth_rng,
            )?)
        };
        let cycle_seconds = t1.elapsed().as_secs_f64();

        let val = if data.validation.is_empty() {
            None
        } else {
            match net.evaluate(&data.validation.images, &data.validation.labels, cfg.eval_batch_size) {
                Ok(v) => Some(v),
                Err(Error::Numeric(message)) => {
                    record.status = RunStatus::Diverged {
                        epoch,
                        batch: batches,
                        message,
                    };
                    return Ok(TrainOutcome {
                        record,
                        network: net,
                        state,
                    });
                }
                Err(e) => return Err(e),
            }
        };
        let epoch_record = EpochRecord {
            epoch,
            learning_rate: lr,
            prune_rate,
            train_loss: loss_sum / batches.max(1) as f64,
            validation_loss: val.map_or(f64::NAN, |v| v.loss),
            validation_error: val.map_or(f64::NAN, |v| v.error),
            densities: net.densities(),
            total_active: net.total_active(),
            train_seconds,
            cycle_seconds,
            cycle,
        };
        state = TrainState {
            epoch: epoch as u64 + 1,
            batches_seen,
            learning_rate: cfg.lr_decay.rate_at(opt.learning_rate, batches_seen),
            prune_rate,
            rng: RngState::capture(&growth_rng),
        };
        observer.on_epoch(&epoch_record, &net, &state)?;
        record.epochs.push(epoch_record);
    }

    match net.evaluate(&data.test.images, &data.test.labels, cfg.eval_batch_size) {
        Ok(test) => {
            record.test_error = Some(test.error);
            record.test_loss = Some(test.loss);
        }
        Err(Error::Numeric(message)) => {
            record.status = RunStatus::Diverged {
                epoch: cfg.epochs,
                batch: 0,
                message,
            }
        }
        Err(e) => return Err(e),
    }
    Ok(TrainOutcome {
        record,
        network: net,
        state,
    })
}
