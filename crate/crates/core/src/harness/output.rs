//! On-disk layout of one run directory:
//!
//! - `config.toml`: the resolved configuration
//! - `layers.csv`: layer spec for the speedup estimator
//! - `epochs.csv`: one row per epoch
//! - `cycles.jsonl`: one cycle report per line
//! - `masks.trace`: the masks in force during each epoch
//! - `checkpoint-eNNN.bin`, `final.ckpt`: checkpoints
//! - `record.json`: the full run record

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::train::{EpochRecord, RunRecord, TrainObserver};
use crate::checkpoint::{save_checkpoint, MaskTraceWriter, TrainState};
use crate::error::Result;
use crate::network::SparseNetwork;
use crate::speedup::{write_layer_spec, LayerCostModel};

pub const EPOCHS_HEADER: &str = "epoch,learning_rate,prune_rate,train_loss,validation_loss,validation_error,\
total_active,global_density,train_seconds,cycle_seconds,removed,regrown,overflow";

pub struct RunWriter {
    dir: PathBuf,
    epochs: usize,
    checkpoint_every: usize,
    total_weights: usize,
    epochs_csv: Option<BufWriter<File>>,
    cycles: Option<BufWriter<File>>,
    trace: Option<MaskTraceWriter<BufWriter<File>>>,
}

impl RunWriter {
    pub fn create(dir: impl AsRef<Path>, cfg: &ExperimentConfig) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
        Ok(Self {
            dir,
            epochs: cfg.epochs,
            checkpoint_every: cfg.checkpoint_every,
            total_weights: 0,
            epochs_csv: None,
            cycles: None,
            trace: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `final.ckpt` and `record.json`.
    pub fn finish(&mut self, record: &RunRecord, net: &SparseNetwork, state: &TrainState) -> Result<()> {
        save_checkpoint(self.dir.join("final.ckpt"), net, state)?;
        fs::write(self.dir.join("record.json"), serde_json::to_string_pretty(record)?)?;
        for w in [self.epochs_csv.as_mut(), self.cycles.as_mut()].into_iter().flatten() {
            w.flush()?;
        }
        Ok(())
    }
}

impl TrainObserver for RunWriter {
    fn on_start(&mut self, net: &SparseNetwork) -> Result<()> {
        self.total_weights = net.total_weights();
        let models = net
            .descriptors()
            .iter()
            .map(LayerCostModel::from_descriptor)
            .collect::<Result<Vec<_>>>()?;
        write_layer_spec(&models, &mut File::create(self.dir.join("layers.csv"))?)?;

        let mut csv = BufWriter::new(File::create(self.dir.join("epochs.csv"))?);
        write!(csv, "{EPOCHS_HEADER}")?;
        for i in 0..net.num_params_layers() {
            write!(csv, ",density_{i}")?;
        }
        writeln!(csv)?;
        self.epochs_csv = Some(csv);
        self.cycles = Some(BufWriter::new(File::create(self.dir.join("cycles.jsonl"))?));

        let mut trace = MaskTraceWriter::create(self.dir.join("masks.trace"), net.num_params_layers())?;
        trace.append(0, net.params().map(|s| &s.mask))?;
        self.trace = Some(trace);
        Ok(())
    }

    fn on_epoch(&mut self, r: &EpochRecord, net: &SparseNetwork, state: &TrainState) -> Result<()> {
        if let Some(csv) = self.epochs_csv.as_mut() {
            let (removed, regrown, overflow) = r
                .cycle
                .as_ref()
                .map_or((0, 0, 0), |c| (c.total_removed, c.total_regrown, c.overflow));
            write!(
                csv,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{removed},{regrown},{overflow}",
                r.epoch,
                r.learning_rate,
                r.prune_rate,
                r.train_loss,
                r.validation_loss,
                r.validation_error,
                r.total_active,
                r.total_active as f64 / self.total_weights.max(1) as f64,
                r.train_seconds,
                r.cycle_seconds,
            )?;
            for d in &r.densities {
                write!(csv, ",{d}")?;
            }
            writeln!(csv)?;
            csv.flush()?;
        }
        if let (Some(c), Some(out)) = (&r.cycle, self.cycles.as_mut()) {
            serde_json::to_writer(&mut *out, c)?;
            writeln!(out)?;
            out.flush()?;
        }
        if r.epoch + 1 < self.epochs {
            if let Some(trace) = self.trace.as_mut() {
                trace.append(r.epoch + 1, net.params().map(|s| &s.mask))?;
            }
        }
        if self.checkpoint_every > 0 && (r.epoch + 1).is_multiple_of(self.checkpoint_every) {
            save_checkpoint(self.dir.join(format!("checkpoint-e{:03}.bin", r.epoch + 1)), net, state)?;
        }
        Ok(())
    }
}
