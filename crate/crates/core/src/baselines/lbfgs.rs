use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, norm, sub};
use crate::solver::Objective;

/// Step taken along `-g` when the Wolfe search fails.
pub const FALLBACK_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_iters: usize,
    /// Function/gradient evaluations allowed per line search.
    pub ls_max_iters: usize,
    /// Stop once `|g| < grad_tol`; zero runs the full iteration budget.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 25,
            c1: 1e-4,
            c2: 0.9,
            max_iters: 100,
            ls_max_iters: 20,
            grad_tol: 1e-8,
        }
    }
}

impl LbfgsConfig {
    /// Fixed inner budget for use inside ADMM.
    pub fn admm_inner(iters: usize) -> Self {
        Self {
            max_iters: iters,
            grad_tol: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::config("L-BFGS history must be at least 1"));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::config(format!(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.ls_max_iters == 0 {
            return Err(Error::config("L-BFGS line search needs at least one evaluation"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::config("grad_tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsIterate {
    pub iteration: usize,
    pub grad_norm: f64,
    /// Objective after the step.
    pub objective: f64,
    pub alpha: f64,
    /// Directional derivative `p'g` before the step.
    pub slope: f64,
    /// Directional derivative along `p` at the accepted point.
    pub step_slope: f64,
    pub evaluations: usize,
    /// The Wolfe search failed and a short `-g` step was taken instead.
    pub fallback: bool,
    /// The curvature pair from this step was discarded.
    pub pair_skipped: bool,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub trace: Vec<LbfgsIterate>,
}

impl LbfgsOutcome {
    pub fn function_evals(&self) -> usize {
        self.trace.iter().map(|t| t.evaluations).sum()
    }
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: `-H g` for the inverse-Hessian approximation held in
/// `pairs`, scaled by `s'y / y'y` of the newest pair.
fn two_loop(g: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for pair in pairs.iter().rev() {
        let a = pair.rho * dot(&pair.s, &q);
        axpy(-a, &pair.y, &mut q);
        alphas.push(a);
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (pair, a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = pair.rho * dot(&pair.y, &q);
        axpy(a - b, &pair.s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct WolfeSearch<'a, O: ?Sized> {
    obj: &'a O,
    x: &'a [f64],
    p: &'a [f64],
    f0: f64,
    slope0: f64,
    cfg: &'a LbfgsConfig,
    evaluations: usize,
}

impl<O: Objective + ?Sized> WolfeSearch<'_, O> {
    fn eval(&mut self, alpha: f64) -> Result<Trial> {
        let mut x = self.x.to_vec();
        axpy(alpha, self.p, &mut x);
        let (f, g) = self.obj.value_and_gradient(&x)?;
        self.evaluations += 1;
        let slope = dot(&g, self.p);
        Ok(Trial { alpha, x, f, g, slope })
    }

    fn budget_left(&self) -> bool {
        self.evaluations < self.cfg.ls_max_iters
    }

    fn armijo_fails(&self, t: &Trial) -> bool {
        !(t.f.is_finite() && t.f <= self.f0 + self.cfg.c1 * t.alpha * self.slope0)
    }

    fn curvature_holds(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.cfg.c2 * self.slope0
    }

    /// Bracketing phase: expands the step until a bracket containing a
    /// strong-Wolfe point is found.
    fn search(&mut self, alpha0: f64) -> Result<Option<Trial>> {
        let mut prev = Trial {
            alpha: 0.0,
            x: self.x.to_vec(),
            f: self.f0,
            g: Vec::new(),
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        let mut first = true;
        while self.budget_left() {
            let t = self.eval(alpha)?;
            if self.armijo_fails(&t) || (!first && t.f >= prev.f) {
                return self.zoom(prev, t);
            }
            if self.curvature_holds(&t) {
                return Ok(Some(t));
            }
            if t.slope >= 0.0 {
                return self.zoom(t, prev);
            }
            alpha = 2.0 * t.alpha;
            prev = t;
            first = false;
        }
        Ok(None)
    }

    /// Zoom phase between `lo` (satisfies Armijo, lowest value so far) and
    /// `hi`, using safeguarded quadratic interpolation.
    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Result<Option<Trial>> {
        while self.budget_left() {
            let width = hi.alpha - lo.alpha;
            let mut alpha = lo.alpha + 0.5 * width;
            if hi.f.is_finite() {
                let curv = hi.f - lo.f - lo.slope * width;
                if curv > 0.0 {
                    let cand = lo.alpha - lo.slope * width * width / (2.0 * curv);
                    let (a, b) = (
                        lo.alpha.min(hi.alpha) + 0.1 * width.abs(),
                        lo.alpha.max(hi.alpha) - 0.1 * width.abs(),
                    );
                    if cand.is_finite() && cand >= a && cand <= b {
                        alpha = cand;
                    }
                }
            }
            let t = self.eval(alpha)?;
            if self.armijo_fails(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature_holds(&t) {
                    return Ok(Some(t));
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
            if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
                break;
            }
        }
        Ok(None)
    }
}

/// Limited-memory BFGS with a strong-Wolfe bracket-and-zoom line search.
pub fn lbfgs_solve<O: Objective + ?Sized>(obj: &O, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<LbfgsOutcome> {
    cfg.validate()?;
    check_dim("L-BFGS start point", obj.dim(), x0.len())?;
    let mut x = x0;
    let (mut f, mut g) = obj.value_and_gradient(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("objective at the start point is {f}")));
    }
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(cfg.history);
    let mut trace = Vec::new();

    for iteration in 0..cfg.max_iters {
        let grad_norm = norm(&g);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at iteration {iteration}")));
        }
        if grad_norm < cfg.grad_tol || grad_norm == 0.0 {
            return Ok(LbfgsOutcome {
                x,
                objective: f,
                grad_norm,
                converged: true,
                trace,
            });
        }
        let mut p = two_loop(&g, &pairs);
        let mut slope = dot(&p, &g);
        if !(slope < 0.0) {
            warn!("L-BFGS iteration {iteration}: non-descent direction, resetting history");
            pairs.clear();
            p = g.iter().map(|v| -v).collect();
            slope = -grad_norm * grad_norm;
        }
        let alpha0 = if pairs.is_empty() { (1.0 / grad_norm).min(1.0) } else { 1.0 };
        let mut search = WolfeSearch {
            obj,
            x: &x,
            p: &p,
            f0: f,
            slope0: slope,
            cfg,
            evaluations: 0,
        };
        let found = search.search(alpha0)?;
        let mut evaluations = search.evaluations;
        let (trial, fallback) = match found {
            Some(t) => (t, false),
            None => {
                warn!("L-BFGS iteration {iteration}: line search failed; taking a {FALLBACK_STEP} step along -g");
                pairs.clear();
                let mut xn = x.clone();
                axpy(-FALLBACK_STEP, &g, &mut xn);
                let (fn_, gn) = obj.value_and_gradient(&xn)?;
                evaluations += 1;
                let slope = -dot(&gn, &g);
                (
                    Trial {
                        alpha: FALLBACK_STEP,
                        x: xn,
                        f: fn_,
                        g: gn,
                        slope,
                    },
                    true,
                )
            }
        };
        if !trial.f.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective after L-BFGS iteration {iteration} is {}",
                trial.f
            )));
        }
        let s = sub(&trial.x, &x);
        let yv = sub(&trial.g, &g);
        let sy = dot(&s, &yv);
        let pair_skipped = !(sy > 1e-10 * norm(&s) * norm(&yv));
        if !pair_skipped {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back(Pair { s, y: yv, rho: 1.0 / sy });
        }
        trace.push(LbfgsIterate {
            iteration,
            grad_norm,
            objective: trial.f,
            alpha: trial.alpha,
            slope,
            step_slope: trial.slope,
            evaluations,
            fallback,
            pair_skipped,
        });
        x = trial.x;
        f = trial.f;
        g = trial.g;
    }
    let grad_norm = norm(&g);
    Ok(LbfgsOutcome {
        x,
        objective: f,
        grad_norm,
        converged: grad_norm < cfg.grad_tol,
        trace,
    })
}
