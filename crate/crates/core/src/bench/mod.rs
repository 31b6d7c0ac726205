//! Experiment driver: reference optima, solver runs with per-iteration
//! metrics, and strong/weak scaling sweeps.

mod config;
mod metrics;
mod reference;
mod run;
mod sweep;

pub use config::{DataFormat, ExperimentConfig, PenaltyKind, SolverKind};
pub use metrics::{
    read_metrics, theta, MetricsLine, MetricsRecord, MetricsWriter, PenaltyRecord, RunSummary, Stopwatch,
    SweepTrial, THETA_TARGET,
};
pub use reference::{compute_reference, compute_reference_with, Reference};
pub use run::{check_files, load_data, load_reference, run_experiment, run_experiment_on, run_remote_worker, ExperimentData};
pub use sweep::{iteration_time_stats, scaling_sweep, ScalingMode, ScalingRow};
