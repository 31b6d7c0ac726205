use std::ops::ControlFlow;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{cg_solve, line_search, Objective};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, norm};

/// Inexact Newton parameters.
///
/// Defaults: 10 CG iterations at relative tolerance `1e-4` and at most 10
/// backtracking steps; `beta = 1e-4`, `gamma = 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    /// Relative CG residual `theta` in `|H p + g| <= theta |g|`.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub armijo_beta: f64,
    pub backtrack_gamma: f64,
    pub ls_max_iters: usize,
    /// Stop once `|g| < grad_tol`.
    pub grad_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            cg_tol: 1e-4,
            cg_max_iters: 10,
            armijo_beta: 1e-4,
            backtrack_gamma: 0.5,
            ls_max_iters: 10,
            grad_tol: 1e-8,
            newton_max_iters: 100,
        }
    }
}

impl NewtonConfig {
    /// High-accuracy settings for single-node reference solves.
    pub fn reference() -> Self {
        Self {
            cg_tol: 1e-10,
            cg_max_iters: 200,
            grad_tol: 1e-10,
            newton_max_iters: 200,
            ..Self::default()
        }
    }

    /// Settings for one ADMM subproblem: a fixed number of Newton steps with
    /// the gradient test effectively off.
    pub fn admm_inner(steps: usize) -> Self {
        Self {
            grad_tol: 0.0,
            newton_max_iters: steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.cg_tol) {
            return Err(Error::config(format!("cg_tol must lie in (0,1), got {}", self.cg_tol)));
        }
        if !open_unit(self.armijo_beta) {
            return Err(Error::config(format!(
                "armijo_beta must lie in (0,1), got {}",
                self.armijo_beta
            )));
        }
        if !open_unit(self.backtrack_gamma) {
            return Err(Error::config(format!(
                "backtrack_gamma must lie in (0,1), got {}",
                self.backtrack_gamma
            )));
        }
        if self.cg_max_iters == 0 {
            return Err(Error::config("cg_max_iters must be at least 1"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::config("grad_tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonIterate {
    pub iteration: usize,
    /// `|g|` at the start of the iteration.
    pub grad_norm: f64,
    /// Objective after the step.
    pub objective: f64,
    pub alpha: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub line_search_evals: usize,
    pub line_search_capped: bool,
    /// CG failed or produced a non-descent direction; `-g` was used.
    pub steepest_descent: bool,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Gradient norm at the returned point, when it was evaluated (always,
    /// except after the iteration cap with `grad_tol = 0`).
    pub grad_norm: Option<f64>,
    pub converged: bool,
    pub trace: Vec<NewtonIterate>,
}

impl NewtonOutcome {
    pub fn cg_iterations(&self) -> usize {
        self.trace.iter().map(|t| t.cg_iterations).sum()
    }

    pub fn function_evals(&self) -> usize {
        self.trace.iter().map(|t| t.line_search_evals).sum()
    }
}

/// Inexact Newton-CG with Armijo backtracking.
///
/// Each iteration solves `H p = -g` by truncated CG, backtracks along `p`
/// and stops once `|g| < grad_tol` or after `newton_max_iters` steps.
pub fn newton_solve<O: Objective + ?Sized>(
    obj: &O,
    x0: Vec<f64>,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome> {
    newton_solve_observed(obj, x0, cfg, |_, _| Ok(ControlFlow::Continue(())))
}

/// [`newton_solve`] that reports every step (and the new iterate) to
/// `observe`, which may stop the solve early.
pub fn newton_solve_observed<O, F>(
    obj: &O,
    x0: Vec<f64>,
    cfg: &NewtonConfig,
    mut observe: F,
) -> Result<NewtonOutcome>
where
    O: Objective + ?Sized,
    F: FnMut(&NewtonIterate, &[f64]) -> Result<ControlFlow<()>>,
{
    cfg.validate()?;
    check_dim("newton start point", obj.dim(), x0.len())?;
    let mut x = x0;
    let (mut fx, mut g) = obj.value_and_gradient(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite(format!("objective at the start point is {fx}")));
    }
    let mut trace = Vec::new();
    let mut grad_fresh = true;

    for iteration in 0..cfg.newton_max_iters {
        if !grad_fresh {
            g = obj.gradient(&x)?;
        }
        let grad_norm = norm(&g);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at iteration {iteration}")));
        }
        if grad_norm < cfg.grad_tol {
            return Ok(NewtonOutcome {
                x,
                objective: fx,
                grad_norm: Some(grad_norm),
                converged: true,
                trace,
            });
        }

        let hessian = obj.hessian(&x)?;
        let (mut p, cg_iterations, cg_residual, mut steepest_descent) =
            match cg_solve(hessian.as_ref(), &g, cfg.cg_tol, cfg.cg_max_iters) {
                Ok(out) => (out.direction, out.iterations, out.residual_norm, false),
                Err(err) => {
                    warn!("newton iteration {iteration}: {err}; falling back to steepest descent");
                    (g.iter().map(|v| -v).collect(), 0, f64::NAN, true)
                }
            };
        drop(hessian);
        if !(dot(&p, &g) < 0.0) {
            warn!("newton iteration {iteration}: CG direction is not a descent direction; using -g");
            p = g.iter().map(|v| -v).collect();
            steepest_descent = true;
        }

        let ls = line_search(obj, &x, fx, &p, &g, cfg)?;
        if ls.capped {
            warn!(
                "newton iteration {iteration}: line search hit {} reductions without sufficient decrease",
                cfg.ls_max_iters
            );
        }
        if !ls.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective after newton iteration {iteration} is {}",
                ls.value
            )));
        }
        axpy(ls.alpha, &p, &mut x);
        fx = ls.value;
        grad_fresh = false;
        trace.push(NewtonIterate {
            iteration,
            grad_norm,
            objective: fx,
            alpha: ls.alpha,
            cg_iterations,
            cg_residual,
            line_search_evals: ls.evaluations,
            line_search_capped: ls.capped,
            steepest_descent,
        });
        if observe(trace.last().expect("just pushed"), &x)?.is_break() {
            break;
        }
    }

    // with the gradient test disabled there is no need to pay for one more gradient
    let grad_norm = if cfg.grad_tol > 0.0 {
        if !grad_fresh {
            g = obj.gradient(&x)?;
        }
        Some(norm(&g))
    } else if grad_fresh {
        Some(norm(&g))
    } else {
        None
    };
    let converged = grad_norm.is_some_and(|gn| gn < cfg.grad_tol);
    Ok(NewtonOutcome {
        x,
        objective: fx,
        grad_norm,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Quadratic;

    #[test]
    fn quadratic_converges_in_one_step() {
        let q = Quadratic::diagonal(&[1.0, 4.0]);
        let cfg = NewtonConfig {
            cg_tol: 1e-10,
            ..NewtonConfig::default()
        };
        let out = newton_solve(&q, vec![1.0, 1.0], &cfg).unwrap();
        assert!(out.converged);
        assert_eq!(out.trace.len(), 1);
        assert!(out.x.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn already_stationary_start_returns_immediately() {
        let q = Quadratic::diagonal(&[1.0, 4.0]);
        let out = newton_solve(&q, vec![0.0, 0.0], &NewtonConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.trace.is_empty());
        assert_eq!(out.x, vec![0.0, 0.0]);
    }

    #[test]
    fn invalid_config_rejected() {
        let q = Quadratic::diagonal(&[1.0]);
        let cfg = NewtonConfig {
            cg_tol: 1.5,
            ..NewtonConfig::default()
        };
        assert!(matches!(newton_solve(&q, vec![1.0], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn inner_budget_limits_iterations() {
        let q = Quadratic::diagonal(&[1.0, 1e3, 1e6]);
        let cfg = NewtonConfig {
            cg_max_iters: 1,
            ..NewtonConfig::admm_inner(2)
        };
        let out = newton_solve(&q, vec![1.0, 1.0, 1.0], &cfg).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert!(out.grad_norm.is_none());
        assert!(!out.converged);
        assert!(out.trace[1].objective < out.trace[0].objective);
    }
}
