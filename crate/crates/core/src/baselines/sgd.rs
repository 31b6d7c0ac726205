use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{sgd_steps_per_epoch, Envelope, Transport, TransportStats};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite, axpy, pairwise_sum};
use crate::model::{gradient, Dataset};
use crate::solver::{Objective, Quadratic};

/// Ratio to the initial objective above which a run counts as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub step_size: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            batch_size: 100,
            epochs: 10,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(format!("SGD step size must be positive, got {}", self.step_size)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("SGD batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Step sizes tried by the tuning sweep: `1e-4, 1e-3, ..., 1e4`.
pub fn step_size_grid() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

/// A finite sum whose mini-batch gradients a worker can evaluate.
pub trait MiniBatchObjective: Sync {
    fn num_samples(&self) -> usize;

    fn dim(&self) -> usize;

    /// Gradient estimate at `x` from the samples in `rows` (sorted, distinct).
    fn batch_gradient(&self, x: &[f64], rows: &[usize]) -> Result<Vec<f64>>;
}

/// Softmax loss on one shard; the batch gradient is
/// `(1/|B|) sum_B grad f_j(x) + (lambda / n_total) x`, an unbiased estimate
/// of the full regularised gradient divided by `n_total`.
pub struct SoftmaxBatch<'a> {
    pub data: &'a Dataset,
    pub lambda: f64,
    pub n_total: usize,
}

impl MiniBatchObjective for SoftmaxBatch<'_> {
    fn num_samples(&self) -> usize {
        self.data.n()
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn batch_gradient(&self, x: &[f64], rows: &[usize]) -> Result<Vec<f64>> {
        let batch = self.data.select_rows(rows)?;
        let mut g = gradient(&batch, x, 0.0)?;
        let inv = 1.0 / rows.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        if self.lambda != 0.0 {
            axpy(self.lambda / self.n_total as f64, x, &mut g);
        }
        Ok(g)
    }
}

/// A single-sample quadratic; every batch sees the exact gradient.
impl MiniBatchObjective for Quadratic {
    fn num_samples(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn batch_gradient(&self, x: &[f64], _rows: &[usize]) -> Result<Vec<f64>> {
        self.gradient(x)
    }
}

/// Per-worker sampling: every epoch draws a fresh permutation of the
/// worker's rows from a stream keyed by `(seed, worker, epoch)`, and step
/// `s` of the epoch takes the next `batch` entries (wrapping around).
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    n_local: usize,
    batch: usize,
    seed: u64,
    worker: u32,
    steps_per_epoch: usize,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchSchedule {
    pub fn new(n_local: usize, batch: usize, seed: u64, worker: u32, steps_per_epoch: usize) -> Result<Self> {
        if batch == 0 || batch > n_local {
            return Err(Error::config(format!(
                "batch size {batch} must lie in 1..={n_local} (rows on worker {worker})"
            )));
        }
        if steps_per_epoch == 0 {
            return Err(Error::config("steps per epoch must be at least 1"));
        }
        Ok(Self {
            n_local,
            batch,
            seed,
            worker,
            steps_per_epoch,
            cached: None,
        })
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut key = [0u8; 32];
            key[..8].copy_from_slice(&self.seed.to_le_bytes());
            key[8..12].copy_from_slice(&self.worker.to_le_bytes());
            key[16..24].copy_from_slice(&epoch.to_le_bytes());
            let mut rng = ChaCha8Rng::from_seed(key);
            let mut perm: Vec<usize> = (0..self.n_local).collect();
            perm.shuffle(&mut rng);
            self.cached = Some((epoch, perm));
        }
        &self.cached.as_ref().expect("just filled").1
    }

    /// Sorted row indices for global step `step`.
    pub fn batch(&mut self, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch as u64;
        let (epoch, s) = (step / spe, (step % spe) as usize);
        let (batch, n) = (self.batch, self.n_local);
        let perm = self.permutation(epoch);
        let mut rows: Vec<usize> = (0..batch).map(|j| perm[(s * batch + j) % n]).collect();
        rows.sort_unstable();
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdEpoch {
    /// 1-based epoch number.
    pub epoch: usize,
    pub objective: f64,
    /// Mini-batch steps taken so far.
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct SgdOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<SgdEpoch>,
    pub stopped_early: bool,
}

/// Synchronous data-parallel SGD over a transport.
///
/// Every step scatters the current `x`, gathers one mini-batch gradient per
/// worker, averages them in worker order and takes `x -= eta * g`. An epoch
/// is `ceil(n_total / (batch * N))` steps. `objective` is the full training
/// objective, evaluated once per epoch for the divergence check and the
/// observer.
pub fn sync_sgd<T, O, F>(
    transport: &mut T,
    objective: &O,
    x0: Vec<f64>,
    n_total: usize,
    cfg: &SgdConfig,
    mut observe: F,
) -> Result<SgdOutcome>
where
    T: Transport + ?Sized,
    O: Objective + ?Sized,
    F: FnMut(&SgdEpoch, &[f64], &TransportStats) -> Result<ControlFlow<()>>,
{
    cfg.validate()?;
    check_dim("SGD start point", objective.dim(), x0.len())?;
    let n_workers = transport.num_workers();
    let steps_per_epoch = sgd_steps_per_epoch(n_total, cfg.batch_size, n_workers);
    let f0 = objective.value(&x0)?;
    let mut x = x0;
    let mut f = f0;
    let mut step: u64 = 0;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        for _ in 0..steps_per_epoch {
            let tag = u32::try_from(step).map_err(|_| Error::config("step count overflow"))?;
            let payloads = (0..n_workers)
                .map(|i| Envelope::Scatter {
                    iteration: tag,
                    worker_id: i as u32,
                    z: x.clone(),
                    y: Vec::new(),
                    rho: cfg.step_size,
                })
                .collect();
            transport.scatter(payloads)?;
            let grads: Vec<Vec<f64>> = transport
                .gather()?
                .into_iter()
                .map(|env| match env {
                    Envelope::Gather { x: g, .. } if g.len() == x.len() => Ok(g),
                    other => Err(Error::Protocol(format!("unexpected SGD reply {other:?}"))),
                })
                .collect::<Result<_>>()?;
            let mut mean = pairwise_sum(&grads, x.len());
            let scale = cfg.step_size / n_workers as f64;
            for (xi, gi) in x.iter_mut().zip(&mut mean) {
                *xi -= scale * *gi;
            }
            step += 1;
        }
        f = objective.value(&x)?;
        if !f.is_finite() || !all_finite(&x) || (f0 > 0.0 && f > DIVERGENCE_FACTOR * f0) {
            return Err(Error::Diverged(format!(
                "SGD with step size {} reached objective {f} at epoch {epoch} (initial {f0})",
                cfg.step_size
            )));
        }
        let record = SgdEpoch {
            epoch,
            objective: f,
            steps: step,
        };
        let flow = observe(&record, &x, &transport.stats())?;
        trace.push(record);
        if flow.is_break() {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok(SgdOutcome {
        x,
        objective: f,
        trace,
        stopped_early,
    })
}
