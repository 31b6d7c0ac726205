//! Global-consensus ADMM coordinator.
//!
//! Workers minimise `f_i(x_i) + (rho_i/2) |z - x_i + y_i/rho_i|^2`; the
//! coordinator owns `z`, the duals and the penalties, and performs the
//! closed-form consensus update with the `lambda/2 |z|^2` regulariser.

mod driver;
mod spectral;

use serde::{Deserialize, Serialize};

pub use driver::{run, AdmmConfig, AdmmIteration, AdmmOutcome};
pub use spectral::{spectral_update, SpectralDecision};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm, norm_sq, pairwise_sum};

pub const RHO_MIN: f64 = 1e-6;
pub const RHO_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PenaltyPolicy {
    Fixed {
        rho0: f64,
    },
    /// Secant-based adaptive penalty, re-estimated every `t_f` iterations.
    Spectral {
        rho0: f64,
        t_f: usize,
        eps_cor: f64,
    },
}

impl Default for PenaltyPolicy {
    fn default() -> Self {
        PenaltyPolicy::Fixed { rho0: 1.0 }
    }
}

impl PenaltyPolicy {
    pub fn spectral() -> Self {
        PenaltyPolicy::Spectral {
            rho0: 1.0,
            t_f: 2,
            eps_cor: 0.2,
        }
    }

    pub fn rho0(&self) -> f64 {
        match *self {
            PenaltyPolicy::Fixed { rho0 } | PenaltyPolicy::Spectral { rho0, .. } => rho0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rho0 = self.rho0();
        if !(rho0 > 0.0 && rho0.is_finite()) {
            return Err(Error::config(format!("rho0 must be positive, got {rho0}")));
        }
        if let PenaltyPolicy::Spectral { t_f, eps_cor, .. } = *self {
            if t_f == 0 {
                return Err(Error::config("t_f must be at least 1"));
            }
            if !(eps_cor > 0.0 && eps_cor < 1.0) {
                return Err(Error::config(format!("eps_cor must lie in (0, 1), got {eps_cor}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_outer_iters: usize,
    /// Use plain norms inside the relative tolerance terms instead of the
    /// squared norms of the printed formulas.
    pub standard_norms: bool,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            eps_abs: 1e-3,
            eps_rel: 1e-3,
            max_outer_iters: 300,
            standard_norms: false,
        }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::config("eps_abs and eps_rel must be positive"));
        }
        Ok(())
    }
}

/// Iterates of one ADMM run. `x[i]`, `y[i]`, `rho[i]` belong to worker `i`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z: Vec<f64>,
    pub prev_z: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub k: usize,
    /// Intermediate duals `y_i + rho_i (z_old - x_i_new)` from the latest
    /// iteration, used by the spectral penalty.
    pub(crate) y_hat: Vec<Vec<f64>>,
    pub(crate) snapshot: Option<spectral::Snapshot>,
}

impl AdmmState {
    /// `z = 0`, `x_i = 0`, `y_i = 0`, `rho_i = rho0`, `k = 0`.
    pub fn new(n_workers: usize, dim: usize, rho0: f64) -> Result<Self> {
        if n_workers == 0 {
            return Err(Error::config("at least one worker is required"));
        }
        if !(rho0 > 0.0 && rho0.is_finite()) {
            return Err(Error::config(format!("rho0 must be positive, got {rho0}")));
        }
        let zeros = vec![0.0; dim];
        Ok(Self {
            z: zeros.clone(),
            prev_z: zeros.clone(),
            x: vec![zeros.clone(); n_workers],
            y: vec![zeros.clone(); n_workers],
            rho: vec![rho0; n_workers],
            k: 0,
            y_hat: vec![zeros; n_workers],
            snapshot: None,
        })
    }

    pub fn n_workers(&self) -> usize {
        self.x.len()
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Installs freshly gathered local iterates and records the intermediate
    /// duals against the current (not yet updated) `z`.
    pub fn set_locals(&mut self, locals: Vec<Vec<f64>>) -> Result<()> {
        check_dim("gathered iterates", self.n_workers(), locals.len())?;
        for x in &locals {
            check_dim("local iterate", self.dim(), x.len())?;
        }
        self.x = locals;
        for i in 0..self.n_workers() {
            let rho = self.rho[i];
            self.y_hat[i] = self.y[i]
                .iter()
                .zip(&self.z)
                .zip(&self.x[i])
                .map(|((y, z), x)| y + rho * (z - x))
                .collect();
        }
        Ok(())
    }

    /// Consensus and dual updates; advances `k`.
    pub fn advance(&mut self, lambda: f64) -> Result<()> {
        let z = z_update(&self.x, &self.y, &self.rho, lambda)?;
        self.prev_z = std::mem::replace(&mut self.z, z);
        y_update(self);
        self.k += 1;
        Ok(())
    }
}

/// `z = sum_i (rho_i x_i - y_i) / (lambda + sum_i rho_i)`, summed over
/// workers in a fixed pairwise tree.
pub fn z_update(x: &[Vec<f64>], y: &[Vec<f64>], rho: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_dim("dual vectors", x.len(), y.len())?;
    check_dim("penalties", x.len(), rho.len())?;
    let d = x.first().map_or(0, Vec::len);
    let denom = lambda + rho.iter().sum::<f64>();
    if !(denom > 0.0) {
        return Err(Error::config(format!(
            "lambda + sum of penalties must be positive, got {denom}"
        )));
    }
    let terms: Vec<Vec<f64>> = x
        .iter()
        .zip(y)
        .zip(rho)
        .map(|((xi, yi), &r)| {
            check_dim("local iterate", d, xi.len())?;
            check_dim("dual vector", d, yi.len())?;
            Ok(xi.iter().zip(yi).map(|(a, b)| r * a - b).collect())
        })
        .collect::<Result<_>>()?;
    let mut z = pairwise_sum(&terms, d);
    for v in &mut z {
        *v /= denom;
    }
    Ok(z)
}

/// `y_i += rho_i (z - x_i)` for every worker, with `z` already advanced.
pub fn y_update(state: &mut AdmmState) {
    for ((y, x), &rho) in state.y.iter_mut().zip(&state.x).zip(&state.rho) {
        for ((yj, xj), zj) in y.iter_mut().zip(x).zip(&state.z) {
            *yj += rho * (zj - xj);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `|z - x_i|` per worker.
    pub primal: Vec<f64>,
    /// `|rho_i (z - z_prev)|` per worker.
    pub dual: Vec<f64>,
    /// Stacked norms over all workers.
    pub primal_norm: f64,
    pub dual_norm: f64,
}

pub fn residuals(state: &AdmmState) -> Residuals {
    let dz = norm(
        &state
            .z
            .iter()
            .zip(&state.prev_z)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    let primal: Vec<f64> = state
        .x
        .iter()
        .map(|x| norm(&x.iter().zip(&state.z).map(|(a, b)| b - a).collect::<Vec<_>>()))
        .collect();
    let dual: Vec<f64> = state.rho.iter().map(|r| r * dz).collect();
    let stacked = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Residuals {
        primal_norm: stacked(&primal),
        dual_norm: stacked(&dual),
        primal,
        dual,
    }
}

/// `(eps_pri, eps_dual)`:
///
/// `eps_pri  = sqrt(N) eps_abs + eps_rel max{ sum_i |x_i|^2, N |z|^2 }`
/// `eps_dual = sqrt(d) eps_abs + eps_rel max_i |y_i|^2`
///
/// With `standard_norms` the squared norms become plain norms
/// (`sqrt(sum_i |x_i|^2)`, `sqrt(N) |z|`, `|y_i|`).
pub fn tolerances(state: &AdmmState, cfg: &StoppingConfig) -> (f64, f64) {
    let n = state.n_workers() as f64;
    let d = state.dim() as f64;
    let x_sq: f64 = state.x.iter().map(|x| norm_sq(x)).sum();
    let z_sq = n * norm_sq(&state.z);
    let y_sq = state.y.iter().map(|y| norm_sq(y)).fold(0.0, f64::max);
    let (x_term, z_term, y_term) = if cfg.standard_norms {
        (x_sq.sqrt(), z_sq.sqrt(), y_sq.sqrt())
    } else {
        (x_sq, z_sq, y_sq)
    };
    let eps_pri = n.sqrt() * cfg.eps_abs + cfg.eps_rel * x_term.max(z_term);
    let eps_dual = d.sqrt() * cfg.eps_abs + cfg.eps_rel * y_term;
    (eps_pri, eps_dual)
}

/// True iff `k >= 1` and every worker's primal and dual residual is within
/// tolerance.
pub fn has_converged(state: &AdmmState, cfg: &StoppingConfig) -> bool {
    if state.k == 0 {
        return false;
    }
    let r = residuals(state);
    let (eps_pri, eps_dual) = tolerances(state, cfg);
    r.primal.iter().all(|&p| p <= eps_pri) && r.dual.iter().all(|&d| d <= eps_dual)
}
