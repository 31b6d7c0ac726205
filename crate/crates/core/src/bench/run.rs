use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::config::{DataFormat, ExperimentConfig, SolverKind};
use super::metrics::{
    theta, MetricsLine, MetricsRecord, MetricsWriter, PenaltyRecord, RunSummary, Stopwatch, SweepTrial,
    THETA_TARGET,
};
use super::reference::Reference;
use crate::admm;
use crate::baselines::{step_size_grid, sync_sgd};
use crate::comm::{sgd_steps_per_epoch, Control, TcpCoordinator, TcpWorkerEndpoint, Transport, TransportStats};
use crate::data::{
    generate_synthetic, load_csv, load_idx, load_libsvm, load_libsvm_with, normalize, partition, LoadOptions,
    PartitionPlan,
};
use crate::error::{Error, Result};
use crate::model::{accuracy, loss, predict, Dataset, SoftmaxObjective};
use crate::solver::newton_solve_observed;
use crate::worker::{run_worker, with_workers, WorkerTask};

/// Training data and optional held-out data for one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let path = path
        .as_deref()
        .ok_or_else(|| Error::config(format!("`{key}` is required for this data format")))?;
    if !path.is_file() {
        return Err(Error::config(format!("{key} file {} does not exist", path.display())));
    }
    Ok(path)
}

fn optional<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<Option<&'a Path>> {
    match path {
        Some(_) => required(path, key).map(Some),
        None => Ok(None),
    }
}

/// Checks that every file the config names exists, before any work starts.
pub fn check_files(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.format {
        DataFormat::Synthetic => {}
        DataFormat::Idx => {
            required(&cfg.data, "data")?;
            required(&cfg.labels, "labels")?;
            if cfg.test_data.is_some() {
                required(&cfg.test_data, "test_data")?;
                required(&cfg.test_labels, "test_labels")?;
            }
        }
        DataFormat::Libsvm | DataFormat::Csv => {
            required(&cfg.data, "data")?;
            optional(&cfg.test_data, "test_data")?;
        }
    }
    optional(&cfg.reference, "reference")?;
    Ok(())
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    check_files(cfg)?;
    let (mut train, mut test) = match cfg.format {
        DataFormat::Synthetic => {
            let (train, test) = generate_synthetic(&cfg.synthetic)?;
            (train, Some(test))
        }
        DataFormat::Idx => {
            let train = load_idx(required(&cfg.data, "data")?, required(&cfg.labels, "labels")?)?;
            let test = match optional(&cfg.test_data, "test_data")? {
                Some(images) => Some(load_idx(images, required(&cfg.test_labels, "test_labels")?)?),
                None => None,
            };
            (train, test)
        }
        DataFormat::Libsvm => {
            let loaded = load_libsvm(required(&cfg.data, "data")?)?;
            let test = match optional(&cfg.test_data, "test_data")? {
                Some(path) => {
                    let opts = LoadOptions {
                        num_features: Some(loaded.dataset.p()),
                        label_map: Some(loaded.label_map.clone()),
                    };
                    Some(load_libsvm_with(path, &opts)?.dataset)
                }
                None => None,
            };
            (loaded.dataset, test)
        }
        DataFormat::Csv => {
            let loaded = load_csv(required(&cfg.data, "data")?, cfg.csv_header, &LoadOptions::default())?;
            let test = match optional(&cfg.test_data, "test_data")? {
                Some(path) => {
                    let opts = LoadOptions {
                        num_features: Some(loaded.dataset.p()),
                        label_map: Some(loaded.label_map.clone()),
                    };
                    Some(load_csv(path, cfg.csv_header, &opts)?.dataset)
                }
                None => None,
            };
            (loaded.dataset, test)
        }
    };
    if let Some(test) = &test {
        if test.p() != train.p() || test.num_classes() != train.num_classes() {
            return Err(Error::input(format!(
                "test data has p={} C={} but training data has p={} C={}",
                test.p(),
                test.num_classes(),
                train.p(),
                train.num_classes()
            )));
        }
    }
    if let Some(limit) = cfg.limit {
        if limit < train.n() {
            train = train.select_rows(&(0..limit).collect::<Vec<_>>())?;
        }
    }
    if cfg.normalize {
        normalize(&mut train, test.as_mut())?;
    }
    info!(
        "training data: n={} p={} C={} ({})",
        train.n(),
        train.p(),
        train.num_classes(),
        if train.is_sparse() { "sparse" } else { "dense" }
    );
    Ok(ExperimentData { train, test })
}

/// Loads the data and reference, then runs the configured solver, writing
/// metrics to `cfg.output` (stdout when unset). No output file is created
/// when loading fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let reference = load_reference(cfg, &data.train)?;
    match &cfg.output {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Error::config(format!("cannot create {}: {e}", path.display())))?;
            let mut sink = MetricsWriter::new(BufWriter::new(file));
            run_experiment_on(cfg, &data, reference.as_ref(), &mut sink)
        }
        None => {
            let mut sink = MetricsWriter::new(std::io::stdout().lock());
            run_experiment_on(cfg, &data, reference.as_ref(), &mut sink)
        }
    }
}

pub fn load_reference(cfg: &ExperimentConfig, train: &Dataset) -> Result<Option<Reference>> {
    let Some(path) = &cfg.reference else {
        return Ok(None);
    };
    let reference = Reference::load(path)?;
    reference.check_matches(train, cfg.lambda)?;
    Ok(Some(reference))
}

/// Runs one experiment on already-loaded data.
pub fn run_experiment_on<W: Write>(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    reference: Option<&Reference>,
    sink: &mut MetricsWriter<W>,
) -> Result<RunSummary> {
    cfg.validate()?;
    if let Some(r) = reference {
        r.check_matches(&data.train, cfg.lambda)?;
    }
    let eval = Evaluator {
        data,
        lambda: cfg.lambda,
        f_star: reference.map(|r| r.objective),
    };
    match cfg.solver {
        SolverKind::NewtonSingle => run_newton_single(cfg, &eval, sink),
        SolverKind::NewtonAdmm | SolverKind::LbfgsAdmm => run_admm(cfg, &eval, sink),
        SolverKind::SyncSgd if cfg.sweep => run_sgd_sweep(cfg, &eval, sink),
        SolverKind::SyncSgd => run_sgd(cfg, cfg.sgd_eta, &eval, sink),
    }
}

struct Evaluator<'a> {
    data: &'a ExperimentData,
    lambda: f64,
    f_star: Option<f64>,
}

struct Evaluation {
    objective: f64,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    theta: Option<f64>,
}

impl Evaluator<'_> {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let train = &self.data.train;
        let objective = loss(train, x, self.lambda)?;
        let train_accuracy = accuracy(&predict(train, x)?, train.labels())?;
        let test_accuracy = match &self.data.test {
            Some(test) if test.n() > 0 => Some(accuracy(&predict(test, x)?, test.labels())?),
            _ => None,
        };
        let theta = self.f_star.map(|f| theta(objective, f)).transpose()?;
        Ok(Evaluation {
            objective,
            train_accuracy,
            test_accuracy,
            theta,
        })
    }
}

/// Per-run bookkeeping: timing, stop rules and the summary.
struct Progress<'s, W: Write> {
    cfg: &'s ExperimentConfig,
    sink: &'s mut MetricsWriter<W>,
    watch: Stopwatch,
    iterations: usize,
    iterations_to_theta: Option<usize>,
    stop_reason: Option<&'static str>,
    stats: TransportStats,
}

impl<'s, W: Write> Progress<'s, W> {
    fn new(cfg: &'s ExperimentConfig, sink: &'s mut MetricsWriter<W>) -> Self {
        Self {
            cfg,
            sink,
            watch: Stopwatch::started(),
            iterations: 0,
            iterations_to_theta: None,
            stop_reason: None,
            stats: TransportStats::default(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        eval: &Evaluator,
        iteration: usize,
        x: &[f64],
        residuals: Option<(f64, f64)>,
        rho: Vec<f64>,
        inner_iterations: Vec<u32>,
        stats: TransportStats,
    ) -> Result<ControlFlow<()>> {
        self.watch.pause();
        let wall_seconds = self.watch.seconds();
        let e = eval.evaluate(x)?;
        self.iterations = iteration;
        self.stats = stats;
        if self.iterations_to_theta.is_none() && e.theta.is_some_and(|t| t <= THETA_TARGET) {
            self.iterations_to_theta = Some(iteration);
        }
        self.sink.write(MetricsLine::Iteration(MetricsRecord {
            solver: self.cfg.solver.name().to_string(),
            iteration,
            wall_seconds,
            objective: e.objective,
            train_accuracy: e.train_accuracy,
            test_accuracy: e.test_accuracy,
            primal_residual: residuals.map(|r| r.0),
            dual_residual: residuals.map(|r| r.1),
            rho,
            messages: stats.messages_sent,
            bytes: stats.bytes_sent,
            rounds: stats.rounds,
            inner_iterations,
            theta: e.theta,
        }))?;
        let flow = if let (Some(t), Some(target)) = (e.theta, self.cfg.stop_theta) {
            if t <= target {
                self.stop_reason = Some("theta");
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        } else {
            ControlFlow::Continue(())
        };
        let flow = match (flow, self.cfg.time_budget_secs) {
            (ControlFlow::Continue(()), Some(budget)) if wall_seconds >= budget => {
                self.stop_reason = Some("time_budget");
                ControlFlow::Break(())
            }
            (flow, _) => flow,
        };
        self.watch.resume();
        Ok(flow)
    }

    fn finish(mut self, eval: &Evaluator, x: &[f64], converged: bool, eta: Option<f64>) -> Result<RunSummary> {
        self.watch.pause();
        let e = eval.evaluate(x)?;
        let stop_reason = match (self.stop_reason, converged) {
            (Some(r), _) => r,
            (None, true) => "converged",
            (None, false) => "max_iterations",
        };
        let summary = RunSummary {
            solver: self.cfg.solver.name().to_string(),
            n_workers: match self.cfg.solver {
                SolverKind::NewtonSingle => 1,
                _ => self.cfg.n_workers,
            },
            normalized: self.cfg.normalize,
            iterations: self.iterations,
            total_wall_seconds: self.watch.seconds(),
            final_objective: e.objective,
            final_train_accuracy: e.train_accuracy,
            final_test_accuracy: e.test_accuracy,
            final_theta: e.theta,
            iterations_to_theta: self.iterations_to_theta,
            converged,
            messages: self.stats.messages_sent,
            rounds: self.stats.rounds,
            eta,
            stop_reason: stop_reason.to_string(),
        };
        self.sink.write(MetricsLine::Summary(summary.clone()))?;
        info!(
            "{}: {} iterations, F = {:.6e}, train accuracy {:.4}, {:.2}s ({stop_reason})",
            summary.solver,
            summary.iterations,
            summary.final_objective,
            summary.final_train_accuracy,
            summary.total_wall_seconds
        );
        Ok(summary)
    }
}

fn run_newton_single<W: Write>(
    cfg: &ExperimentConfig,
    eval: &Evaluator,
    sink: &mut MetricsWriter<W>,
) -> Result<RunSummary> {
    let train = &eval.data.train;
    let obj = SoftmaxObjective::new(train, cfg.lambda)?;
    let mut progress = Progress::new(cfg, sink);
    let out = newton_solve_observed(&obj, vec![0.0; train.dim()], &cfg.newton(), |it, x| {
        progress.record(
            eval,
            it.iteration + 1,
            x,
            None,
            Vec::new(),
            vec![it.cg_iterations as u32],
            TransportStats::default(),
        )
    })?;
    progress.finish(eval, &out.x, out.converged, None)
}

/// Runs `coordinate` against workers: local threads, or remote workers
/// connecting to `cfg.listen`.
fn coordinate_workers<R>(
    cfg: &ExperimentConfig,
    train: &Dataset,
    task: &WorkerTask,
    coordinate: impl FnOnce(&mut dyn Transport) -> Result<R>,
) -> Result<R> {
    let plan = PartitionPlan::new(cfg.partition, train.n(), cfg.n_workers)?;
    match &cfg.listen {
        None => {
            let shards = partition(train, &plan)?;
            with_workers(cfg.backend, &shards, task, cfg.timeout(), coordinate)
        }
        Some(addr) => {
            let mut coord = TcpCoordinator::bind(addr.as_str(), cfg.n_workers)?.with_timeout(cfg.timeout());
            info!("waiting for {} workers on {}", cfg.n_workers, coord.local_addr()?);
            coord.accept_workers()?;
            coord.broadcast(task.to_control()?)?;
            let result = coordinate(&mut coord);
            if let Err(e) = coord.broadcast(Control::Stop) {
                warn!("could not stop remote workers: {e}");
            }
            result
        }
    }
}

/// Worker process for a coordinator started with `listen`: loads the same
/// data, takes shard `id` of the same partition and serves it.
pub fn run_remote_worker(cfg: &ExperimentConfig, coordinator: &str, id: u32) -> Result<()> {
    let data = load_data(cfg)?;
    let plan = PartitionPlan::new(cfg.partition, data.train.n(), cfg.n_workers)?;
    if id as usize >= cfg.n_workers {
        return Err(Error::config(format!("worker id {id} is out of range for {} workers", cfg.n_workers)));
    }
    let shard = data.train.select_rows(plan.rows(id as usize))?;
    let mut ep = TcpWorkerEndpoint::connect(coordinator, id, cfg.timeout())?;
    info!("worker {id} connected with {} rows", shard.n());
    run_worker(&mut ep, &shard)
}

fn run_admm<W: Write>(cfg: &ExperimentConfig, eval: &Evaluator, sink: &mut MetricsWriter<W>) -> Result<RunSummary> {
    let train = &eval.data.train;
    let task = WorkerTask::Admm {
        inner: cfg.inner_solver()?,
    };
    let admm_cfg = cfg.admm();
    coordinate_workers(cfg, train, &task, |transport| {
        let mut progress = Progress::new(cfg, sink);
        let outcome = admm::run(transport, train.dim(), &admm_cfg, |state, it, stats| {
            for d in &it.spectral {
                progress.sink.write(MetricsLine::Penalty(PenaltyRecord {
                    iteration: it.k,
                    worker: d.worker,
                    alpha: d.alpha,
                    beta: d.beta,
                    rho_before: d.rho_before,
                    rho_after: d.rho_after,
                }))?;
            }
            progress.record(
                eval,
                it.k,
                &state.z,
                Some((it.residuals.primal_norm, it.residuals.dual_norm)),
                it.rho.clone(),
                it.inner.iter().map(|s| s.iterations).collect(),
                *stats,
            )
        })?;
        progress.finish(eval, &outcome.state.z, outcome.converged, None)
    })
}

fn run_sgd<W: Write>(
    cfg: &ExperimentConfig,
    eta: f64,
    eval: &Evaluator,
    sink: &mut MetricsWriter<W>,
) -> Result<RunSummary> {
    let train = &eval.data.train;
    let n_total = train.n();
    let task = WorkerTask::Sgd {
        batch_size: cfg.sgd_batch,
        seed: cfg.seed,
        steps_per_epoch: sgd_steps_per_epoch(n_total, cfg.sgd_batch, cfg.n_workers),
        lambda: cfg.lambda,
        n_total,
    };
    let objective = SoftmaxObjective::new(train, cfg.lambda)?;
    let sgd_cfg = cfg.sgd(eta);
    coordinate_workers(cfg, train, &task, |transport| {
        let mut progress = Progress::new(cfg, sink);
        let out = sync_sgd(transport, &objective, vec![0.0; train.dim()], n_total, &sgd_cfg, |epoch, x, stats| {
            progress.record(eval, epoch.epoch, x, None, Vec::new(), Vec::new(), *stats)
        })?;
        progress.finish(eval, &out.x, false, Some(eta))
    })
}

/// Runs SGD once per step size on the grid and reports the run with the
/// lowest final objective. Diverged step sizes are recorded and skipped.
fn run_sgd_sweep<W: Write>(
    cfg: &ExperimentConfig,
    eval: &Evaluator,
    sink: &mut MetricsWriter<W>,
) -> Result<RunSummary> {
    let mut best: Option<(RunSummary, Vec<MetricsLine>)> = None;
    for eta in step_size_grid() {
        let mut trial_sink = MetricsWriter::new(std::io::sink());
        let final_objective = match run_sgd(cfg, eta, eval, &mut trial_sink) {
            Ok(summary) => {
                let f = summary.final_objective;
                if best.as_ref().is_none_or(|(b, _)| f < b.final_objective) {
                    best = Some((summary, trial_sink.into_lines()));
                }
                Some(f)
            }
            Err(e @ (Error::Diverged(_) | Error::NonFinite(_))) => {
                info!("step size {eta:e} diverged: {e}");
                None
            }
            Err(e) => return Err(e),
        };
        sink.write(MetricsLine::Sweep(SweepTrial { eta, final_objective }))?;
    }
    let (summary, lines) = best.ok_or_else(|| Error::Diverged("every step size in the sweep diverged".into()))?;
    info!("best step size {:e}", summary.eta.unwrap_or(f64::NAN));
    for line in lines {
        sink.write(line)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn small(solver: SolverKind) -> ExperimentConfig {
        ExperimentConfig {
            solver,
            synthetic: SyntheticSpec {
                n: 200,
                p: 5,
                num_classes: 3,
                separation: 2.0,
                noise: 1.0,
                seed: 1,
            },
            n_workers: 2,
            max_outer_iters: 5,
            newton_max_iters: 5,
            sgd_epochs: 3,
            sgd_batch: 10,
            sgd_eta: 0.1,
            ..ExperimentConfig::default()
        }
    }

    fn run(cfg: &ExperimentConfig) -> (RunSummary, Vec<MetricsLine>) {
        let data = load_data(cfg).unwrap();
        let mut sink = MetricsWriter::new(Vec::new());
        let s = run_experiment_on(cfg, &data, None, &mut sink).unwrap();
        (s, sink.into_lines())
    }

    #[test]
    fn every_solver_writes_rows_and_summary() {
        for solver in [
            SolverKind::NewtonSingle,
            SolverKind::NewtonAdmm,
            SolverKind::LbfgsAdmm,
            SolverKind::SyncSgd,
        ] {
            let (summary, lines) = run(&small(solver));
            let rows: Vec<&MetricsRecord> = lines
                .iter()
                .filter_map(|l| match l {
                    MetricsLine::Iteration(r) => Some(r),
                    _ => None,
                })
                .collect();
            assert_eq!(rows.len(), summary.iterations, "{solver:?}");
            assert!(rows.windows(2).all(|w| w[0].wall_seconds <= w[1].wall_seconds));
            assert!(rows.windows(2).all(|w| w[1].iteration == w[0].iteration + 1));
            assert!(matches!(lines.last(), Some(MetricsLine::Summary(_))));
            assert!(summary.final_objective < 200.0 * 3f64.ln(), "{solver:?}");
        }
    }

    #[test]
    fn missing_file_is_a_config_error() {
        let cfg = ExperimentConfig {
            format: DataFormat::Libsvm,
            data: Some("/nonexistent/train.svm".into()),
            ..ExperimentConfig::default()
        };
        let err = load_data(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sweep_reports_every_step_size() {
        let cfg = ExperimentConfig {
            sweep: true,
            sgd_epochs: 1,
            ..small(SolverKind::SyncSgd)
        };
        let (summary, lines) = run(&cfg);
        let trials: Vec<&SweepTrial> = lines
            .iter()
            .filter_map(|l| match l {
                MetricsLine::Sweep(t) => Some(t),
                _ => None,
            })
            .collect();
        assert_eq!(trials.len(), 9);
        let best = trials
            .iter()
            .filter_map(|t| t.final_objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(summary.final_objective, best);
        assert_eq!(trials[0].eta, 1e-4);
    }
}
