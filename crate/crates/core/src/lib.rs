//! Sparse training with momentum-driven prune/redistribute/regrow cycles.

mod alloc;
pub mod analysis;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod network;
pub mod scheduler;
pub mod sparsity;
pub mod speedup;
pub mod strategy;
pub mod tensor;

pub use error::{Error, Result};
pub use harness::{ExperimentConfig, RunRecord};
pub use network::{Layer, LayerState, ModelId, OptimizerConfig, SparseNetwork};
pub use scheduler::{CycleOptions, CycleReport, DecayFamily, PruneSchedule, RedistributionPlan};
pub use sparsity::{SparsityConfig, SparsityMode};
pub use speedup::{LayerCostModel, SpeedupReport};
pub use strategy::{select_strategy, Strategy, StrategyConfig};
pub use tensor::{ConvGeometry, Tensor};
