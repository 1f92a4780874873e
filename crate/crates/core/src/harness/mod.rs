//! Dataset ingestion, experiment configuration and the training loop.

mod config;
mod idx;
mod output;
mod train;

pub use config::{ExperimentConfig, LrDecay, Preset, PruneConfig};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx_dataset, load_mnist, parse_idx_images, parse_idx_labels,
    write_idx_images, write_idx_labels, Dataset, IdxImages, Mnist, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use output::{RunWriter, EPOCHS_HEADER};
pub use train::{
    initial_network, split_indices, split_train_validation, stream_rng, train, train_with, EpochRecord,
    ExperimentData, RunRecord, RunStatus, TrainObserver, TrainOutcome,
};
