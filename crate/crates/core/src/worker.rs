//! Worker-side message loop and helpers that launch a local cluster of
//! worker threads behind either transport.

use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::baselines::{lbfgs_solve, BatchSchedule, LbfgsConfig, MiniBatchObjective, SoftmaxBatch};
use crate::comm::{
    in_process, Control, Envelope, InnerStats, TcpCoordinator, TcpWorkerEndpoint, Transport,
    WorkerEndpoint,
};
use crate::error::{check_dim, Error, Result};
use crate::model::{Dataset, SoftmaxObjective};
use crate::solver::{newton_solve, AugmentedObjective, NewtonConfig};

/// Local solver used for the ADMM x-update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", content = "config", rename_all = "kebab-case")]
pub enum InnerSolver {
    Newton(NewtonConfig),
    Lbfgs(LbfgsConfig),
}

/// What a worker computes for each scatter; sent once as a `Config`
/// control message before the first round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "params", rename_all = "kebab-case")]
pub enum WorkerTask {
    /// Minimise the local augmented Lagrangian, warm-started from the
    /// previous local iterate.
    Admm { inner: InnerSolver },
    /// Return one mini-batch gradient per step.
    Sgd {
        batch_size: usize,
        seed: u64,
        steps_per_epoch: usize,
        lambda: f64,
        n_total: usize,
    },
}

impl WorkerTask {
    pub fn to_control(&self) -> Result<Control> {
        Ok(Control::Config(serde_json::to_string(self)?))
    }
}

enum Solver<'a> {
    Admm {
        local: SoftmaxObjective<'a>,
        inner: InnerSolver,
        x: Option<Vec<f64>>,
    },
    Sgd {
        objective: SoftmaxBatch<'a>,
        schedule: BatchSchedule,
    },
}

fn configure<'a>(text: &str, shard: &'a Dataset, worker: u32) -> Result<Solver<'a>> {
    let task: WorkerTask = serde_json::from_str(text)
        .map_err(|e| Error::Protocol(format!("bad worker configuration: {e}")))?;
    Ok(match task {
        WorkerTask::Admm { inner } => Solver::Admm {
            local: SoftmaxObjective::new(shard, 0.0)?,
            inner,
            x: None,
        },
        WorkerTask::Sgd {
            batch_size,
            seed,
            steps_per_epoch,
            lambda,
            n_total,
        } => Solver::Sgd {
            objective: SoftmaxBatch {
                data: shard,
                lambda,
                n_total,
            },
            schedule: BatchSchedule::new(shard.n(), batch_size, seed, worker, steps_per_epoch)?,
        },
    })
}

fn admm_step(
    local: &SoftmaxObjective<'_>,
    inner: &InnerSolver,
    warm: &mut Option<Vec<f64>>,
    z: &[f64],
    y: &[f64],
    rho: f64,
) -> Result<(Vec<f64>, InnerStats)> {
    let aug = AugmentedObjective::new(local, rho, z, y)?;
    let x0 = warm.take().unwrap_or_else(|| vec![0.0; z.len()]);
    let (x, stats) = match inner {
        InnerSolver::Newton(cfg) => {
            let out = newton_solve(&aug, x0, cfg)?;
            let mut flags = 0;
            if out.trace.iter().any(|t| t.line_search_capped) {
                flags |= InnerStats::LINE_SEARCH_CAPPED;
            }
            if out.trace.iter().any(|t| t.steepest_descent) {
                flags |= InnerStats::STEEPEST_DESCENT;
            }
            let stats = InnerStats {
                iterations: out.trace.len() as u32,
                cg_iterations: out.cg_iterations() as u32,
                function_evals: out.function_evals() as u32,
                objective: out.objective,
                grad_norm: out.grad_norm.unwrap_or(f64::NAN),
                flags,
            };
            (out.x, stats)
        }
        InnerSolver::Lbfgs(cfg) => {
            let out = lbfgs_solve(&aug, x0, cfg)?;
            let flags = if out.trace.iter().any(|t| t.fallback) {
                InnerStats::STEEPEST_DESCENT
            } else {
                0
            };
            let stats = InnerStats {
                iterations: out.trace.len() as u32,
                cg_iterations: 0,
                function_evals: out.function_evals() as u32,
                objective: out.objective,
                grad_norm: out.grad_norm,
                flags,
            };
            (out.x, stats)
        }
    };
    *warm = Some(x.clone());
    Ok((x, stats))
}

/// One mini-batch gradient for global step `step`.
pub fn sgd_step<O: MiniBatchObjective + ?Sized>(
    objective: &O,
    schedule: &mut BatchSchedule,
    step: u32,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_dim("SGD iterate", objective.dim(), x.len())?;
    let rows = schedule.batch(step as u64);
    objective.batch_gradient(x, &rows)
}

fn abort<E: WorkerEndpoint + ?Sized>(ep: &mut E, iteration: u32, err: Error) -> Error {
    warn!("worker {} aborting: {err}", ep.worker_id());
    let _ = ep.send(Envelope::Control {
        iteration,
        worker_id: ep.worker_id(),
        command: Control::Stop,
    });
    err
}

/// Serves scatter requests on `shard` until the coordinator sends `Stop`.
///
/// On a local failure the worker notifies the coordinator with a `Stop`
/// control message and returns the error.
pub fn run_worker<E: WorkerEndpoint + ?Sized>(ep: &mut E, shard: &Dataset) -> Result<()> {
    let id = ep.worker_id();
    let mut solver: Option<Solver<'_>> = None;
    loop {
        match ep.recv()? {
            Envelope::Control { command, iteration, .. } => match command {
                Control::Stop => return Ok(()),
                Control::Start => {}
                Control::Config(text) => match configure(&text, shard, id) {
                    Ok(s) => solver = Some(s),
                    Err(e) => return Err(abort(ep, iteration, e)),
                },
            },
            Envelope::Scatter {
                iteration, z, y, rho, ..
            } => {
                let reply = match solver.as_mut() {
                    None => Err(Error::Protocol("scatter received before configuration".into())),
                    Some(Solver::Admm { local, inner, x }) => admm_step(local, inner, x, &z, &y, rho),
                    Some(Solver::Sgd { objective, schedule }) => {
                        sgd_step(objective, schedule, iteration, &z).map(|g| (g, InnerStats::default()))
                    }
                };
                match reply {
                    Ok((x, stats)) => {
                        debug!("worker {id} finished round {iteration}");
                        ep.send(Envelope::Gather {
                            iteration,
                            worker_id: id,
                            x,
                            stats,
                        })?
                    }
                    Err(e) => return Err(abort(ep, iteration, e)),
                }
            }
            other @ Envelope::Gather { .. } => {
                return Err(abort(
                    ep,
                    other.iteration(),
                    Error::Protocol("worker received a gather envelope".into()),
                ))
            }
        }
    }
}

/// Serves SGD steps for an arbitrary mini-batch objective; the batch
/// schedule is fixed up front rather than configured over the wire.
pub fn run_minibatch_worker<E, O>(ep: &mut E, objective: &O, mut schedule: BatchSchedule) -> Result<()>
where
    E: WorkerEndpoint + ?Sized,
    O: MiniBatchObjective + ?Sized,
{
    let id = ep.worker_id();
    loop {
        match ep.recv()? {
            Envelope::Control {
                command: Control::Stop, ..
            } => return Ok(()),
            Envelope::Control { .. } => {}
            Envelope::Scatter { iteration, z, .. } => match sgd_step(objective, &mut schedule, iteration, &z) {
                Ok(g) => ep.send(Envelope::Gather {
                    iteration,
                    worker_id: id,
                    x: g,
                    stats: InnerStats::default(),
                })?,
                Err(e) => return Err(abort(ep, iteration, e)),
            },
            other => {
                return Err(abort(
                    ep,
                    other.iteration(),
                    Error::Protocol("worker received a gather envelope".into()),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Worker threads connected by channels.
    InProcess,
    /// Worker threads connected over loopback TCP.
    Tcp,
}

/// Spawns one worker thread per shard, configures them with `task`, runs
/// `coordinate` against the transport and shuts the workers down.
///
/// When both sides fail, a worker's own error is preferred over the
/// transport error it caused on the coordinator.
pub fn with_workers<R>(
    backend: Backend,
    shards: &[Dataset],
    task: &WorkerTask,
    timeout: Duration,
    coordinate: impl FnOnce(&mut dyn Transport) -> Result<R>,
) -> Result<R> {
    if shards.is_empty() {
        return Err(Error::config("at least one worker is required"));
    }
    let config = task.to_control()?;
    std::thread::scope(|scope| {
        let (result, handles) = match backend {
            Backend::InProcess => {
                let (transport, endpoints) = in_process(shards.len());
                let mut transport = transport.with_timeout(timeout);
                let handles: Vec<_> = endpoints
                    .into_iter()
                    .zip(shards)
                    .map(|(mut ep, shard)| scope.spawn(move || run_worker(&mut ep, shard)))
                    .collect();
                let result = transport
                    .broadcast(config)
                    .and_then(|()| coordinate(&mut transport));
                let _ = transport.broadcast(Control::Stop);
                drop(transport);
                (result, handles)
            }
            Backend::Tcp => {
                let mut coord = TcpCoordinator::bind("127.0.0.1:0", shards.len())?.with_timeout(timeout);
                let addr = coord.local_addr()?;
                let handles: Vec<_> = shards
                    .iter()
                    .enumerate()
                    .map(|(id, shard)| {
                        scope.spawn(move || {
                            let mut ep = TcpWorkerEndpoint::connect(addr, id as u32, timeout)?;
                            run_worker(&mut ep, shard)
                        })
                    })
                    .collect();
                let result = coord
                    .accept_workers()
                    .and_then(|()| coord.broadcast(config))
                    .and_then(|()| coordinate(&mut coord));
                let _ = coord.broadcast(Control::Stop);
                drop(coord);
                (result, handles)
            }
        };
        let worker_errors: Vec<Error> = handles
            .into_iter()
            .enumerate()
            .filter_map(|(id, h)| match h.join() {
                Ok(Ok(())) => None,
                Ok(Err(e)) => Some(e),
                Err(_) => Some(Error::Transport(format!("worker {id} panicked"))),
            })
            .collect();
        let root_cause = worker_errors.into_iter().find(|e| e.exit_code() != 4);
        match (result, root_cause) {
            (Ok(r), None) => Ok(r),
            (Ok(_), Some(e)) => Err(e),
            (Err(e), Some(w)) if e.exit_code() == 4 => Err(w),
            (Err(e), _) => Err(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::InProcessEndpoint;

    #[test]
    fn task_json_round_trip() {
        let task = WorkerTask::Admm {
            inner: InnerSolver::Newton(NewtonConfig::admm_inner(1)),
        };
        let Control::Config(text) = task.to_control().unwrap() else {
            panic!()
        };
        assert_eq!(serde_json::from_str::<WorkerTask>(&text).unwrap(), task);
        let sgd = WorkerTask::Sgd {
            batch_size: 10,
            seed: 3,
            steps_per_epoch: 4,
            lambda: 1e-5,
            n_total: 100,
        };
        let text = serde_json::to_string(&sgd).unwrap();
        assert_eq!(serde_json::from_str::<WorkerTask>(&text).unwrap(), sgd);
    }

    #[test]
    fn unconfigured_worker_aborts() {
        let shard = Dataset::dense(&[vec![1.0], vec![-1.0]], vec![1, 2], 2).unwrap();
        let (mut t, mut eps) = in_process(1);
        let mut ep: InProcessEndpoint = eps.pop().unwrap();
        t.scatter(vec![Envelope::Scatter {
            iteration: 0,
            worker_id: 0,
            z: vec![0.0],
            y: vec![0.0],
            rho: 1.0,
        }])
        .unwrap();
        assert!(matches!(run_worker(&mut ep, &shard), Err(Error::Protocol(_))));
        assert!(matches!(t.gather(), Err(Error::Transport(_))));
    }

    #[test]
    fn failing_worker_error_wins() {
        let shard = Dataset::dense(&[vec![1.0], vec![-1.0]], vec![1, 2], 2).unwrap();
        let task = WorkerTask::Sgd {
            batch_size: 5,
            seed: 0,
            steps_per_epoch: 1,
            lambda: 0.0,
            n_total: 2,
        };
        let err = with_workers(Backend::InProcess, &[shard], &task, Duration::from_secs(5), |t| {
            t.scatter(vec![Envelope::Scatter {
                iteration: 0,
                worker_id: 0,
                z: vec![0.0],
                y: Vec::new(),
                rho: 1.0,
            }])?;
            t.gather().map(|_| ())
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }
}
