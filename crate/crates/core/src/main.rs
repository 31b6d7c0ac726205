use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use newton_admm::bench::{
    compute_reference_with, load_data, read_metrics, run_experiment, run_remote_worker, scaling_sweep, theta,
    DataFormat, ExperimentConfig, MetricsLine, PenaltyKind, Reference, ScalingMode, SolverKind, THETA_TARGET,
};
use newton_admm::data::PartitionScheme;
use newton_admm::solver::NewtonConfig;
use newton_admm::worker::Backend;
use newton_admm::{Error, Result};

/// Environment variable that pins the compute thread count.
const THREADS_ENV: &str = "NEWTON_ADMM_THREADS";

#[derive(Parser)]
#[command(name = "newton-admm", version, about = "Distributed Newton-ADMM for softmax classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full problem on one node to high precision and save x*, F*.
    Reference {
        #[command(flatten)]
        config: ConfigArgs,
        /// Where to write the reference (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Newton iteration budget.
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
    },
    /// Run one experiment and write metrics as JSON lines.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Strong or weak scaling sweep over worker counts.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        workers: Vec<usize>,
        #[arg(long, value_enum, default_value = "strong")]
        mode: ScalingMode,
    },
    /// Relative suboptimality against a reference, for one value or a
    /// whole metrics file.
    Theta {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, conflicts_with = "metrics", required_unless_present = "metrics")]
        objective: Option<f64>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Serve one shard to a coordinator started with `--listen`.
    Worker {
        #[command(flatten)]
        config: ConfigArgs,
        /// Coordinator address.
        #[arg(long)]
        connect: String,
        #[arg(long)]
        id: u32,
    },
}

/// Every config key as a flag; flags override `--config`.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    #[arg(long, value_enum)]
    format: Option<DataFormat>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    csv_header: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    normalize: Option<bool>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    synthetic_n: Option<usize>,
    #[arg(long)]
    synthetic_p: Option<usize>,
    #[arg(long)]
    synthetic_classes: Option<usize>,
    #[arg(long)]
    synthetic_separation: Option<f64>,
    #[arg(long)]
    synthetic_noise: Option<f64>,
    #[arg(long)]
    synthetic_seed: Option<u64>,

    #[arg(long)]
    n_workers: Option<usize>,
    #[arg(long, value_enum)]
    partition: Option<PartitionScheme>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    timeout_secs: Option<f64>,

    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    cg_max_iters: Option<usize>,
    #[arg(long)]
    armijo_beta: Option<f64>,
    #[arg(long)]
    backtrack_gamma: Option<f64>,
    #[arg(long)]
    ls_max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    newton_max_iters: Option<usize>,
    #[arg(long)]
    inner_newton_steps: Option<usize>,

    #[arg(long, value_enum)]
    penalty_policy: Option<PenaltyKind>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    t_f: Option<usize>,
    #[arg(long)]
    eps_cor: Option<f64>,
    #[arg(long)]
    eps_abs: Option<f64>,
    #[arg(long)]
    eps_rel: Option<f64>,
    #[arg(long)]
    max_outer_iters: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    standard_norms: Option<bool>,

    #[arg(long)]
    lbfgs_history: Option<usize>,
    #[arg(long)]
    lbfgs_inner_iters: Option<usize>,

    #[arg(long)]
    sgd_eta: Option<f64>,
    #[arg(long)]
    sgd_batch: Option<usize>,
    #[arg(long)]
    sgd_epochs: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    sweep: Option<bool>,

    #[arg(long)]
    seed: Option<u64>,
    /// Reference file for theta.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Metrics file (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    time_budget_secs: Option<f64>,
    #[arg(long)]
    stop_theta: Option<f64>,
}

macro_rules! override_fields {
    ($cfg:expr, $args:expr; plain: $($p:ident),*; optional: $($o:ident),*) => {
        $(if let Some(v) = $args.$p.clone() { $cfg.$p = v; })*
        $(if let Some(v) = $args.$o.clone() { $cfg.$o = Some(v); })*
    };
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        override_fields!(cfg, self;
            plain: solver, format, csv_header, normalize, n_workers, partition, backend, timeout_secs,
                lambda, cg_tol, cg_max_iters, armijo_beta, backtrack_gamma, ls_max_iters, grad_tol,
                newton_max_iters, inner_newton_steps, penalty_policy, rho0, t_f, eps_cor, eps_abs, eps_rel,
                max_outer_iters, standard_norms, lbfgs_history, lbfgs_inner_iters, sgd_eta, sgd_batch,
                sgd_epochs, sweep, seed;
            optional: data, labels, test_data, test_labels, limit, listen, reference, output,
                time_budget_secs, stop_theta
        );
        let syn = &mut cfg.synthetic;
        if let Some(v) = self.synthetic_n {
            syn.n = v;
        }
        if let Some(v) = self.synthetic_p {
            syn.p = v;
        }
        if let Some(v) = self.synthetic_classes {
            syn.num_classes = v;
        }
        if let Some(v) = self.synthetic_separation {
            syn.separation = v;
        }
        if let Some(v) = self.synthetic_noise {
            syn.noise = v;
        }
        if let Some(v) = self.synthetic_seed {
            syn.seed = v;
        }
        Ok(cfg)
    }
}

fn pin_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    pin_threads()?;
    match cli.command {
        Command::Reference {
            config,
            out,
            max_iters,
        } => {
            let cfg = config.resolve()?;
            let data = load_data(&cfg)?;
            let newton = NewtonConfig {
                newton_max_iters: max_iters,
                ..NewtonConfig::reference()
            };
            let r = compute_reference_with(&data.train, cfg.lambda, &newton)?;
            r.save(&out)?;
            println!(
                "F* = {:.15e}  |g| = {:.3e}  iterations = {}  -> {}",
                r.objective,
                r.grad_norm,
                r.iterations,
                out.display()
            );
        }
        Command::Train { config } => {
            let summary = run_experiment(&config.resolve()?)?;
            if config.output.is_some() || config.config.is_some() {
                eprintln!(
                    "{}: {} iterations, F = {:.6e}, theta = {}",
                    summary.solver,
                    summary.iterations,
                    summary.final_objective,
                    summary.final_theta.map_or("n/a".into(), |t| format!("{t:.4e}"))
                );
            }
        }
        Command::Sweep { config, workers, mode } => {
            let cfg = config.resolve()?;
            cfg.validate()?;
            match &cfg.output {
                Some(path) => {
                    let file = std::fs::File::create(path)?;
                    scaling_sweep(&cfg, &workers, mode, std::io::BufWriter::new(file))?;
                }
                None => {
                    scaling_sweep(&cfg, &workers, mode, std::io::stdout().lock())?;
                }
            }
        }
        Command::Theta {
            reference,
            objective,
            metrics,
        } => {
            let r = Reference::load(&reference)?;
            if let Some(f) = objective {
                println!("{:.6e}", theta(f, r.objective)?);
            } else if let Some(path) = metrics {
                let file = std::fs::File::open(&path)
                    .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
                let mut first_hit = None;
                for line in read_metrics(BufReader::new(file))? {
                    if let MetricsLine::Iteration(rec) = line {
                        let t = theta(rec.objective, r.objective)?;
                        if t <= THETA_TARGET && first_hit.is_none() {
                            first_hit = Some(rec.iteration);
                        }
                        println!("{} {:.6e}", rec.iteration, t);
                    }
                }
                match first_hit {
                    Some(k) => println!("# theta <= {THETA_TARGET} first at iteration {k}"),
                    None => println!("# theta <= {THETA_TARGET} not reached"),
                }
            }
        }
        Command::Worker { config, connect, id } => {
            run_remote_worker(&config.resolve()?, &connect, id)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
