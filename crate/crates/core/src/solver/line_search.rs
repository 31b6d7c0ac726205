use super::{NewtonConfig, Objective};
use crate::error::{check_dim, Result};
use crate::linalg::{axpy, dot};

#[derive(Debug, Clone, Copy)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    /// Objective at `x + alpha p`.
    pub value: f64,
    /// Objective evaluations spent.
    pub evaluations: usize,
    /// Iteration cap reached without sufficient decrease; `alpha` is the
    /// last step tried.
    pub capped: bool,
}

/// Armijo backtracking: tries `alpha = 1, gamma, gamma^2, ...` until
/// `F(x + alpha p) <= F(x) + alpha beta pᵀg`, giving up after
/// `ls_max_iters` reductions. `fx` must be `F(x)`.
pub fn line_search<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    fx: f64,
    p: &[f64],
    g: &[f64],
    cfg: &NewtonConfig,
) -> Result<LineSearchOutcome> {
    check_dim("line search direction", x.len(), p.len())?;
    check_dim("line search gradient", x.len(), g.len())?;
    let slope = dot(p, g);
    let mut alpha = 1.0;
    let mut trial = vec![0.0; x.len()];
    let mut evaluations = 0;
    let mut reductions = 0;
    loop {
        trial.copy_from_slice(x);
        axpy(alpha, p, &mut trial);
        let value = obj.value(&trial)?;
        evaluations += 1;
        // NaN compares false, so a non-finite trial backtracks
        if value <= fx + alpha * cfg.armijo_beta * slope {
            return Ok(LineSearchOutcome {
                alpha,
                value,
                evaluations,
                capped: false,
            });
        }
        if reductions >= cfg.ls_max_iters {
            return Ok(LineSearchOutcome {
                alpha,
                value,
                evaluations,
                capped: true,
            });
        }
        reductions += 1;
        alpha *= cfg.backtrack_gamma;
    }
}
