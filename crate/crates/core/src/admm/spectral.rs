//! Spectral (secant-based) penalty selection with a correlation safeguard.
//!
//! For worker `i`, the local curvature is estimated from the pair
//! `(dx, dy_hat)` and the consensus-side curvature from `(dz, -dy)`, both
//! taken between the current iterate and the previous snapshot.

use serde::{Deserialize, Serialize};

use super::{AdmmState, PenaltyPolicy, RHO_MAX, RHO_MIN};
use crate::linalg::{dot, norm_sq, sub};

#[derive(Debug, Clone)]
pub(crate) struct Snapshot {
    k: usize,
    x: Vec<Vec<f64>>,
    y_hat: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    z: Vec<f64>,
}

impl Snapshot {
    fn take(state: &AdmmState) -> Self {
        Self {
            k: state.k,
            x: state.x.clone(),
            y_hat: state.y_hat.clone(),
            y: state.y.clone(),
            z: state.z.clone(),
        }
    }
}

/// Outcome of one penalty re-estimation for one worker. `alpha`/`beta` are
/// `None` when that side failed the safeguard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecision {
    pub worker: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub rho_before: f64,
    pub rho_after: f64,
}

/// Hybrid steepest-descent / minimum-gradient estimate from a secant pair,
/// or `None` when the pair's correlation does not exceed `eps_cor`.
pub(crate) fn curvature(ds: &[f64], dg: &[f64], eps_cor: f64) -> Option<f64> {
    let (ss, gg) = (norm_sq(ds), norm_sq(dg));
    let inner = dot(ds, dg);
    if !(ss > 0.0 && gg > 0.0) {
        return None;
    }
    let correlation = inner / (ss.sqrt() * gg.sqrt());
    if !(correlation > eps_cor) {
        return None;
    }
    let sd = gg / inner;
    let mg = inner / ss;
    let hybrid = if 2.0 * mg > sd { mg } else { sd - mg / 2.0 };
    (hybrid.is_finite() && hybrid > 0.0).then_some(hybrid)
}

/// Re-estimates every `rho_i` when the policy is spectral and at least
/// `t_f` iterations have passed since the last snapshot. Returns one
/// decision per worker on update iterations, otherwise nothing.
pub fn spectral_update(state: &mut AdmmState, policy: &PenaltyPolicy) -> Vec<SpectralDecision> {
    let PenaltyPolicy::Spectral { t_f, eps_cor, .. } = *policy else {
        return Vec::new();
    };
    let Some(snap) = state.snapshot.as_ref() else {
        state.snapshot = Some(Snapshot::take(state));
        return Vec::new();
    };
    if state.k < snap.k + t_f {
        return Vec::new();
    }
    let dz = sub(&state.z, &snap.z);
    let decisions: Vec<SpectralDecision> = (0..state.n_workers())
        .map(|i| {
            let dx = sub(&state.x[i], &snap.x[i]);
            let dy_hat = sub(&state.y_hat[i], &snap.y_hat[i]);
            let neg_dy = sub(&snap.y[i], &state.y[i]);
            let alpha = curvature(&dx, &dy_hat, eps_cor);
            let beta = curvature(&dz, &neg_dy, eps_cor);
            let rho_before = state.rho[i];
            let rho_after = match (alpha, beta) {
                (Some(a), Some(b)) => (a * b).sqrt(),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => rho_before,
            }
            .clamp(RHO_MIN, RHO_MAX);
            SpectralDecision {
                worker: i,
                alpha,
                beta,
                rho_before,
                rho_after,
            }
        })
        .collect();
    for d in &decisions {
        state.rho[d.worker] = d.rho_after;
    }
    state.snapshot = Some(Snapshot::take(state));
    decisions
}
