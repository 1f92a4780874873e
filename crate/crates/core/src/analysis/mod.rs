//! Channel class specialization and sensitivity sweeps.

mod specialization;
pub mod stats;
mod sweep;

pub use specialization::{channel_class_specialization, ActivationReduction, ClassActivationProfile};
pub use stats::{pooled_std_error, MeanSe};
pub use sweep::{
    aggregate_runs, read_runs_csv, sensitivity_sweep, sweep_configs, write_points_csv, write_runs_csv, SweepAxis,
    SweepPoint, SweepResult, SweepRun, POINTS_HEADER, RUNS_HEADER,
};
