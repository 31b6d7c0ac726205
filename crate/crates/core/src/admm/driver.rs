use std::ops::ControlFlow;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::{
    has_converged, residuals, spectral_update, tolerances, AdmmState, PenaltyPolicy, Residuals,
    SpectralDecision, StoppingConfig,
};
use crate::comm::{Envelope, InnerStats, Transport, TransportStats};
use crate::error::{check_dim, Error, Result};
use crate::linalg::all_finite;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmConfig {
    pub lambda: f64,
    pub penalty: PenaltyPolicy,
    pub stopping: StoppingConfig,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-5,
            penalty: PenaltyPolicy::default(),
            stopping: StoppingConfig::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        self.penalty.validate()?;
        self.stopping.validate()
    }
}

/// What happened in one outer iteration.
#[derive(Debug, Clone)]
pub struct AdmmIteration {
    /// Iteration count after the update (1 for the first iteration).
    pub k: usize,
    pub residuals: Residuals,
    pub eps_pri: f64,
    pub eps_dual: f64,
    /// Penalties used during this iteration.
    pub rho: Vec<f64>,
    /// Penalty re-estimations performed at the end of the iteration.
    pub spectral: Vec<SpectralDecision>,
    pub inner: Vec<InnerStats>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub state: AdmmState,
    pub converged: bool,
    /// The observer asked to stop before convergence or the cap.
    pub stopped_early: bool,
}

/// Runs consensus ADMM over already-configured workers.
///
/// Each outer iteration is one scatter of `(z, y_i, rho_i)` and one gather
/// of the new `x_i`, followed by the consensus, dual and penalty updates.
/// `observe` sees the state and the transport counters after every
/// iteration and may stop the run.
pub fn run<T, F>(transport: &mut T, dim: usize, cfg: &AdmmConfig, mut observe: F) -> Result<AdmmOutcome>
where
    T: Transport + ?Sized,
    F: FnMut(&AdmmState, &AdmmIteration, &TransportStats) -> Result<ControlFlow<()>>,
{
    cfg.validate()?;
    let n_workers = transport.num_workers();
    let mut state = AdmmState::new(n_workers, dim, cfg.penalty.rho0())?;
    if !cfg.stopping.standard_norms {
        info!("ADMM tolerances use squared norms inside the relative terms");
    }
    let mut converged = false;
    let mut stopped_early = false;

    while state.k < cfg.stopping.max_outer_iters {
        let tag = u32::try_from(state.k).map_err(|_| Error::config("iteration count overflow"))?;
        let payloads = (0..n_workers)
            .map(|i| Envelope::Scatter {
                iteration: tag,
                worker_id: i as u32,
                z: state.z.clone(),
                y: state.y[i].clone(),
                rho: state.rho[i],
            })
            .collect();
        transport.scatter(payloads)?;

        let mut locals = Vec::with_capacity(n_workers);
        let mut inner = Vec::with_capacity(n_workers);
        for env in transport.gather()? {
            let Envelope::Gather { worker_id, x, stats, .. } = env else {
                return Err(Error::Protocol("gather returned a non-gather envelope".into()));
            };
            check_dim("gathered iterate", dim, x.len())?;
            if !all_finite(&x) {
                return Err(Error::NonFinite(format!("iterate from worker {worker_id}")));
            }
            locals.push(x);
            inner.push(stats);
        }
        state.set_locals(locals)?;
        let rho = state.rho.clone();
        state.advance(cfg.lambda)?;

        let res = residuals(&state);
        let (eps_pri, eps_dual) = tolerances(&state, &cfg.stopping);
        converged = has_converged(&state, &cfg.stopping);
        let spectral = if converged {
            Vec::new()
        } else {
            spectral_update(&mut state, &cfg.penalty)
        };
        debug!(
            "admm k={} |r|={:.3e} |d|={:.3e} eps=({:.3e}, {:.3e})",
            state.k, res.primal_norm, res.dual_norm, eps_pri, eps_dual
        );
        let record = AdmmIteration {
            k: state.k,
            residuals: res,
            eps_pri,
            eps_dual,
            rho,
            spectral,
            inner,
            converged,
        };
        if observe(&state, &record, &transport.stats())?.is_break() {
            stopped_early = !converged;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(AdmmOutcome {
        state,
        converged,
        stopped_early,
    })
}
