use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparsemo::analysis::{ActivationReduction, SweepAxis};
use sparsemo::harness::{ExperimentConfig, Preset};
use sparsemo::{DecayFamily, ModelId, SparsityMode, StrategyConfig};

#[derive(Parser, Debug)]
#[command(name = "sparsemo", version, about = "Sparse momentum training experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one configuration over all its seeds.
    Train(TrainArgs),
    /// Train the four redistribution/growth combinations.
    Ablate(AblateArgs),
    /// Vary one hyperparameter and summarize test error per value.
    Sweep(SweepArgs),
    /// Estimate speedups from a mask trace.
    Speedup(SpeedupArgs),
    /// Class specialization of a convolution's channels.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Mnist,
    MnistDesk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    FullySparse,
    PartiallyDense,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    /// TOML config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from a preset instead of the defaults (ignored with --config).
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub model: Option<ModelId>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub prune_rate: Option<f64>,
    #[arg(long)]
    pub schedule: Option<DecayFamily>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum and gradient smoothing factor together.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Gradient smoothing factor alone.
    #[arg(long)]
    pub ema_alpha: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub no_nesterov: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_decay_every: Option<u64>,
    /// `redistribution/growth`, e.g. `none/random`.
    #[arg(long)]
    pub strategy: Option<StrategyConfig>,
    #[arg(long)]
    pub dense_baseline: bool,
    #[arg(long)]
    pub reset_momentum_on_prune: bool,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Shorthand for seeds 0..N.
    #[arg(long, conflicts_with = "seeds")]
    pub num_seeds: Option<u64>,
    #[arg(long)]
    pub max_train_examples: Option<usize>,
    #[arg(long)]
    pub max_test_examples: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent runs (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl ExperimentArgs {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match (&self.config, self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(PresetArg::Mnist)) => ExperimentConfig::preset(Preset::Mnist),
            (None, Some(PresetArg::MnistDesk)) => ExperimentConfig::preset(Preset::MnistDesk),
            (None, None) => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(c.model, self.model);
        set!(c.sparsity.density, self.density);
        if let Some(m) = self.mode {
            c.sparsity.mode = match m {
                ModeArg::FullySparse => SparsityMode::FullySparse,
                ModeArg::PartiallyDense => SparsityMode::PartiallyDense,
            };
        }
        set!(c.epochs, self.epochs);
        set!(c.prune.initial_rate, self.prune_rate);
        set!(c.prune.family, self.schedule);
        set!(c.optimizer.learning_rate, self.lr);
        if let Some(m) = self.momentum {
            c.optimizer.momentum_alpha = m;
            c.optimizer.ema_alpha = m;
        }
        set!(c.optimizer.ema_alpha, self.ema_alpha);
        set!(c.optimizer.weight_decay, self.weight_decay);
        if self.no_nesterov {
            c.optimizer.nesterov = false;
        }
        set!(c.batch_size, self.batch_size);
        set!(c.lr_decay.every_batches, self.lr_decay_every);
        set!(c.strategy, self.strategy);
        c.dense_baseline |= self.dense_baseline;
        c.cycle.reset_momentum_on_prune |= self.reset_momentum_on_prune;
        set!(c.seeds, self.seeds);
        if let Some(n) = self.num_seeds {
            c.seeds = (0..n).collect();
        }
        if self.max_train_examples.is_some() {
            c.max_train_examples = self.max_train_examples;
        }
        if self.max_test_examples.is_some() {
            c.max_test_examples = self.max_test_examples;
        }
        set!(c.checkpoint_every, self.checkpoint_every);
        set!(c.data_dir, self.data_dir);
        set!(c.output_dir, self.out);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Subset of strategies to run (default: all four).
    #[arg(long = "cell", value_delimiter = ',')]
    pub cells: Option<Vec<StrategyConfig>>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// prune-rate, momentum or schedule-family.
    #[arg(long)]
    pub axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SpeedupArgs {
    /// Run directory holding `masks.trace` and `layers.csv`.
    #[arg(long, conflicts_with_all = ["trace", "layers"])]
    pub run_dir: Option<PathBuf>,
    #[arg(long, requires = "layers")]
    pub trace: Option<PathBuf>,
    #[arg(long, requires = "trace")]
    pub layers: Option<PathBuf>,
    /// Only count convolution layers.
    #[arg(long)]
    pub conv_only: bool,
    /// Row label in the table.
    #[arg(long, default_value = "model")]
    pub name: String,
    /// Directory for `speedup.tsv` and `speedup.json` (default: the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReductionArg {
    Sum,
    Mean,
}

impl From<ReductionArg> for ActivationReduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::Sum => ActivationReduction::Sum,
            ReductionArg::Mean => ActivationReduction::Mean,
        }
    }
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Index among the parametric layers; must be a convolution.
    #[arg(long)]
    pub layer: usize,
    #[arg(long, value_enum, default_value = "sum")]
    pub reduction: ReductionArg,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(long, default_value = "data/mnist")]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub max_examples: Option<usize>,
    /// CSV output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
