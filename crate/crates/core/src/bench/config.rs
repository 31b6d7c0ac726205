use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, PenaltyPolicy, StoppingConfig};
use crate::baselines::{LbfgsConfig, SgdConfig};
use crate::data::{PartitionScheme, SyntheticSpec};
use crate::error::{Error, Result};
use crate::solver::NewtonConfig;
use crate::worker::{Backend, InnerSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    NewtonAdmm,
    LbfgsAdmm,
    SyncSgd,
    NewtonSingle,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::NewtonAdmm => "newton-admm",
            SolverKind::LbfgsAdmm => "lbfgs-admm",
            SolverKind::SyncSgd => "sync-sgd",
            SolverKind::NewtonSingle => "newton-single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Libsvm,
    Csv,
    Idx,
    /// Generated Gaussian clusters (see `synthetic`).
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    Fixed,
    Spectral,
}

/// Everything one run needs. Field names double as config keys and CLI
/// flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub solver: SolverKind,

    pub format: DataFormat,
    /// Training file (images file for IDX).
    pub data: Option<PathBuf>,
    /// IDX label file for `data`.
    pub labels: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub csv_header: bool,
    pub normalize: bool,
    /// Keep only the first `limit` training rows.
    pub limit: Option<usize>,
    pub synthetic: SyntheticSpec,

    pub n_workers: usize,
    pub partition: PartitionScheme,
    pub backend: Backend,
    /// Listen address for external TCP workers; when unset, TCP workers run
    /// as local threads on loopback.
    pub listen: Option<String>,
    pub timeout_secs: f64,

    pub lambda: f64,

    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub armijo_beta: f64,
    pub backtrack_gamma: f64,
    pub ls_max_iters: usize,
    pub grad_tol: f64,
    pub newton_max_iters: usize,
    pub inner_newton_steps: usize,

    pub penalty_policy: PenaltyKind,
    pub rho0: f64,
    pub t_f: usize,
    pub eps_cor: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_outer_iters: usize,
    pub standard_norms: bool,

    pub lbfgs_history: usize,
    pub lbfgs_inner_iters: usize,

    pub sgd_eta: f64,
    pub sgd_batch: usize,
    pub sgd_epochs: usize,
    /// Try every step size in `1e-4 ..= 1e4` and keep the best run.
    pub sweep: bool,

    pub seed: u64,
    /// Reference optimum file used for theta.
    pub reference: Option<PathBuf>,
    /// Metrics output (JSON lines).
    pub output: Option<PathBuf>,
    /// Stop after this much solver time.
    pub time_budget_secs: Option<f64>,
    /// Stop once theta drops to this value (needs a reference).
    pub stop_theta: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let newton = NewtonConfig::default();
        let stopping = StoppingConfig::default();
        let lbfgs = LbfgsConfig::default();
        let sgd = SgdConfig::default();
        Self {
            solver: SolverKind::NewtonAdmm,
            format: DataFormat::Synthetic,
            data: None,
            labels: None,
            test_data: None,
            test_labels: None,
            csv_header: false,
            normalize: false,
            limit: None,
            synthetic: SyntheticSpec::default(),
            n_workers: 4,
            partition: PartitionScheme::Contiguous,
            backend: Backend::InProcess,
            listen: None,
            timeout_secs: 60.0,
            lambda: 1e-5,
            cg_tol: newton.cg_tol,
            cg_max_iters: newton.cg_max_iters,
            armijo_beta: newton.armijo_beta,
            backtrack_gamma: newton.backtrack_gamma,
            ls_max_iters: newton.ls_max_iters,
            grad_tol: newton.grad_tol,
            newton_max_iters: newton.newton_max_iters,
            inner_newton_steps: 1,
            penalty_policy: PenaltyKind::Fixed,
            rho0: 1.0,
            t_f: 2,
            eps_cor: 0.2,
            eps_abs: stopping.eps_abs,
            eps_rel: stopping.eps_rel,
            max_outer_iters: stopping.max_outer_iters,
            standard_norms: stopping.standard_norms,
            lbfgs_history: lbfgs.history,
            lbfgs_inner_iters: 5,
            sgd_eta: sgd.step_size,
            sgd_batch: sgd.batch_size,
            sgd_epochs: sgd.epochs,
            sweep: false,
            seed: 0,
            reference: None,
            output: None,
            time_budget_secs: None,
            stop_theta: None,
        }
    }
}

impl ExperimentConfig {
    /// Newton settings for the single-node solver.
    pub fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            cg_tol: self.cg_tol,
            cg_max_iters: self.cg_max_iters,
            armijo_beta: self.armijo_beta,
            backtrack_gamma: self.backtrack_gamma,
            ls_max_iters: self.ls_max_iters,
            grad_tol: self.grad_tol,
            newton_max_iters: self.newton_max_iters,
        }
    }

    /// Inner solver for the ADMM x-update.
    pub fn inner_solver(&self) -> Result<InnerSolver> {
        match self.solver {
            SolverKind::NewtonAdmm => Ok(InnerSolver::Newton(NewtonConfig {
                newton_max_iters: self.inner_newton_steps,
                ..self.newton()
            })),
            SolverKind::LbfgsAdmm => Ok(InnerSolver::Lbfgs(LbfgsConfig {
                history: self.lbfgs_history,
                ..LbfgsConfig::admm_inner(self.lbfgs_inner_iters)
            })),
            other => Err(Error::config(format!("{} has no ADMM inner solver", other.name()))),
        }
    }

    pub fn penalty(&self) -> PenaltyPolicy {
        match self.penalty_policy {
            PenaltyKind::Fixed => PenaltyPolicy::Fixed { rho0: self.rho0 },
            PenaltyKind::Spectral => PenaltyPolicy::Spectral {
                rho0: self.rho0,
                t_f: self.t_f,
                eps_cor: self.eps_cor,
            },
        }
    }

    pub fn admm(&self) -> AdmmConfig {
        AdmmConfig {
            lambda: self.lambda,
            penalty: self.penalty(),
            stopping: StoppingConfig {
                eps_abs: self.eps_abs,
                eps_rel: self.eps_rel,
                max_outer_iters: self.max_outer_iters,
                standard_norms: self.standard_norms,
            },
        }
    }

    pub fn sgd(&self, step_size: f64) -> SgdConfig {
        SgdConfig {
            step_size,
            batch_size: self.sgd_batch,
            epochs: self.sgd_epochs,
            seed: self.seed,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_workers == 0 {
            return Err(Error::config("n_workers must be at least 1"));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::config("timeout_secs must be positive"));
        }
        if self.inner_newton_steps == 0 || self.lbfgs_inner_iters == 0 {
            return Err(Error::config("inner solver budgets must be at least 1"));
        }
        match self.solver {
            SolverKind::NewtonSingle => self.newton().validate()?,
            SolverKind::NewtonAdmm | SolverKind::LbfgsAdmm => {
                self.admm().validate()?;
                match self.inner_solver()? {
                    InnerSolver::Newton(c) => c.validate()?,
                    InnerSolver::Lbfgs(c) => c.validate()?,
                }
            }
            SolverKind::SyncSgd => self.sgd(self.sgd_eta).validate()?,
        }
        if let Some(t) = self.stop_theta {
            if self.reference.is_none() && t.is_finite() {
                log::warn!("stop_theta is set but no reference was given; it will be ignored");
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_settings() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.lambda, 1e-5);
        assert_eq!(cfg.cg_max_iters, 10);
        assert_eq!(cfg.cg_tol, 1e-4);
        assert_eq!(cfg.ls_max_iters, 10);
        assert_eq!(cfg.inner_newton_steps, 1);
        assert_eq!(cfg.penalty(), PenaltyPolicy::Fixed { rho0: 1.0 });
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"solver":"lbfgs-admm","n_workers":2,"synthetic":{"n":200}}"#).unwrap();
        assert_eq!(cfg.solver, SolverKind::LbfgsAdmm);
        assert_eq!(cfg.synthetic.n, 200);
        assert_eq!(cfg.synthetic.p, 20);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus":1}"#).is_err());
        match cfg.inner_solver().unwrap() {
            InnerSolver::Lbfgs(c) => assert_eq!((c.max_iters, c.history), (5, 25)),
            other => panic!("{other:?}"),
        }
    }
}
