use super::LinearOperator;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, norm};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub direction: Vec<f64>,
    pub iterations: usize,
    /// `|H p + g|` for the returned direction.
    pub residual_norm: f64,
    /// CG stopped on a non-positive curvature direction.
    pub negative_curvature: bool,
}

/// Truncated conjugate gradient on `H p = -g`, started from `p = 0`.
///
/// Stops as soon as `|H p + g| <= theta |g|` or after `max_iters` CG
/// iterations. If a direction with `dᵀHd <= 0` shows up (round-off on a
/// nearly singular operator) the current iterate is returned, or `-g` when
/// it happens on the first iteration.
pub fn cg_solve(h: &dyn LinearOperator, g: &[f64], theta: f64, max_iters: usize) -> Result<CgOutcome> {
    check_dim("cg right-hand side", h.dim(), g.len())?;
    let dim = g.len();
    let g_norm = norm(g);
    if !g_norm.is_finite() {
        return Err(Error::NonFinite("cg right-hand side".into()));
    }
    let mut p = vec![0.0; dim];
    if g_norm == 0.0 {
        return Ok(CgOutcome {
            direction: p,
            iterations: 0,
            residual_norm: 0.0,
            negative_curvature: false,
        });
    }
    let target = theta * g_norm;
    let mut hp = vec![0.0; dim];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut d = r.clone();
    let mut q = vec![0.0; dim];
    let mut rr = dot(g, g);
    let mut iterations = 0;
    let mut negative_curvature = false;

    while iterations < max_iters {
        h.apply(&d, &mut q);
        let curvature = dot(&d, &q);
        if !curvature.is_finite() {
            return Err(Error::NonFinite(format!("cg curvature at iteration {iterations}")));
        }
        if curvature <= 0.0 {
            negative_curvature = true;
            if iterations == 0 {
                p.copy_from_slice(&r);
                h.apply(&p, &mut hp);
            }
            break;
        }
        let step = rr / curvature;
        axpy(step, &d, &mut p);
        axpy(step, &q, &mut hp);
        axpy(-step, &q, &mut r);
        iterations += 1;
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::NonFinite(format!("cg residual at iteration {iterations}")));
        }
        if rr_next.sqrt() <= target {
            break;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
    }

    let residual: Vec<f64> = hp.iter().zip(g).map(|(a, b)| a + b).collect();
    Ok(CgOutcome {
        direction: p,
        iterations,
        residual_norm: norm(&residual),
        negative_curvature,
    })
}
