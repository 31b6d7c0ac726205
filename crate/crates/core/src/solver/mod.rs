//! Inexact Newton-CG machinery: the objective abstraction, truncated CG,
//! Armijo backtracking and the outer Newton loop.

mod augmented;
mod cg;
mod line_search;
mod newton;

pub use augmented::AugmentedObjective;
pub use cg::{cg_solve, CgOutcome};
pub use line_search::{line_search, LineSearchOutcome};
pub use newton::{newton_solve, newton_solve_observed, NewtonConfig, NewtonIterate, NewtonOutcome};

use crate::error::Result;

/// A symmetric linear map on `R^d`, applied matrix-free.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Writes `H v` into `out` (overwriting it).
    fn apply(&self, v: &[f64], out: &mut [f64]);

    fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(v, &mut out);
        out
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        (self.f)(v, out)
    }
}

/// Smooth objective exposing value, gradient and a Hessian operator.
///
/// `hessian` returns an operator frozen at `x`, so the per-point work
/// (softmax probabilities for the cross-entropy loss) is paid once per
/// Newton iteration rather than once per CG iteration.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(x)?, self.gradient(x)?))
    }

    fn hessian<'s>(&'s self, x: &[f64]) -> Result<Box<dyn LinearOperator + 's>>;

    fn hessian_vec(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.hessian(x)?.apply_vec(v))
    }
}

/// `f(x) = ½ xᵀ H x - bᵀ x` for an explicit symmetric `H`; used as a test
/// problem and by the baselines' unit tests.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub h: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Quadratic {
    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let h = (0..d)
            .map(|i| (0..d).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self { h, b: vec![0.0; d] }
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.h.iter().map(|row| crate::linalg::dot(row, x)).collect()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let hx = self.mul(x);
        Ok(0.5 * crate::linalg::dot(x, &hx) - crate::linalg::dot(&self.b, x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(crate::linalg::sub(&self.mul(x), &self.b))
    }

    fn hessian<'s>(&'s self, _x: &[f64]) -> Result<Box<dyn LinearOperator + 's>> {
        Ok(Box::new(FnOperator::new(self.dim(), move |v, out| {
            out.copy_from_slice(&self.mul(v));
        })))
    }
}
