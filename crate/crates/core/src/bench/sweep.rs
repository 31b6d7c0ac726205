use std::io::Write;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{MetricsLine, MetricsWriter};
use super::reference::{compute_reference, Reference};
use super::run::{load_data, run_experiment_on, ExperimentData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    /// Same training set for every worker count.
    Strong,
    /// Same number of rows per worker; the training set grows with N.
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingRow {
    pub mode: ScalingMode,
    pub n_workers: usize,
    pub rows_total: usize,
    pub rows_per_worker: usize,
    pub iterations: usize,
    pub mean_iteration_seconds: f64,
    pub std_iteration_seconds: f64,
    pub iterations_to_theta: Option<usize>,
    pub final_theta: Option<f64>,
    pub final_objective: f64,
}

/// Mean and sample standard deviation of the per-iteration times implied
/// by cumulative wall-clock readings.
pub fn iteration_time_stats(cumulative: &[f64]) -> (f64, f64) {
    let deltas: Vec<f64> = std::iter::once(0.0)
        .chain(cumulative.iter().copied())
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    if deltas.is_empty() {
        return (0.0, 0.0);
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let std = if deltas.len() > 1 {
        (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn rows_for(mode: ScalingMode, n: usize, worker_counts: &[usize], n_workers: usize) -> usize {
    match mode {
        ScalingMode::Strong => n,
        ScalingMode::Weak => {
            let largest = worker_counts.iter().copied().max().unwrap_or(1);
            (n / largest) * n_workers
        }
    }
}

/// Runs the experiment once per worker count. A single-node reference is
/// computed for every distinct training set so theta is always reported.
/// Each row is also written to `sink` as one JSON line.
pub fn scaling_sweep<W: Write>(
    base: &ExperimentConfig,
    worker_counts: &[usize],
    mode: ScalingMode,
    mut sink: W,
) -> Result<Vec<ScalingRow>> {
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(Error::config("worker counts must be a non-empty list of positive integers"));
    }
    let data = load_data(base)?;
    let n = data.train.n();
    let largest = worker_counts.iter().copied().max().unwrap_or(1);
    if n < largest {
        return Err(Error::config(format!("{n} rows cannot be spread over {largest} workers")));
    }
    let mut cached: Option<(usize, Reference)> = None;
    let mut rows = Vec::with_capacity(worker_counts.len());
    for &n_workers in worker_counts {
        let rows_total = rows_for(mode, n, worker_counts, n_workers);
        let subset = ExperimentData {
            train: if rows_total == n {
                data.train.clone()
            } else {
                data.train.select_rows(&(0..rows_total).collect::<Vec<_>>())?
            },
            test: data.test.clone(),
        };
        let reference = match cached.take() {
            Some((size, r)) if size == rows_total => r,
            _ => compute_reference(&subset.train, base.lambda)?,
        };
        let cfg = ExperimentConfig {
            n_workers,
            output: None,
            ..base.clone()
        };
        let mut metrics = MetricsWriter::new(std::io::sink());
        let summary = run_experiment_on(&cfg, &subset, Some(&reference), &mut metrics)?;
        let times: Vec<f64> = metrics
            .lines()
            .iter()
            .filter_map(|l| match l {
                MetricsLine::Iteration(r) => Some(r.wall_seconds),
                _ => None,
            })
            .collect();
        let (mean, std) = iteration_time_stats(&times);
        let row = ScalingRow {
            mode,
            n_workers,
            rows_total,
            rows_per_worker: rows_total.div_ceil(n_workers),
            iterations: summary.iterations,
            mean_iteration_seconds: mean,
            std_iteration_seconds: std,
            iterations_to_theta: summary.iterations_to_theta,
            final_theta: summary.final_theta,
            final_objective: summary.final_objective,
        };
        info!(
            "N={n_workers}: {} rows, {:.4}s +- {:.4}s per iteration",
            rows_total, mean, std
        );
        serde_json::to_writer(&mut sink, &row)?;
        sink.write_all(b"\n")?;
        rows.push(row);
        cached = Some((rows_total, reference));
    }
    sink.flush()?;
    Ok(rows)
}
