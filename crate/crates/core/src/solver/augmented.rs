use super::{LinearOperator, Objective};
use crate::error::{check_dim, Error, Result};
use crate::linalg::norm_sq;

/// ADMM local subproblem
/// `f(x) + (rho/2) |z - x + y/rho|^2`
/// built around a base objective `f`.
pub struct AugmentedObjective<'a, O: ?Sized> {
    base: &'a O,
    rho: f64,
    z: &'a [f64],
    y: &'a [f64],
}

impl<'a, O: Objective + ?Sized> AugmentedObjective<'a, O> {
    pub fn new(base: &'a O, rho: f64, z: &'a [f64], y: &'a [f64]) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::config(format!("penalty rho must be positive, got {rho}")));
        }
        check_dim("consensus vector z", base.dim(), z.len())?;
        check_dim("dual vector y", base.dim(), y.len())?;
        Ok(Self { base, rho, z, y })
    }

    /// `z - x + y/rho`
    fn gap(&self, x: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.rho;
        x.iter()
            .zip(self.z)
            .zip(self.y)
            .map(|((xi, zi), yi)| zi - xi + yi * inv)
            .collect()
    }
}

struct Shifted<'a> {
    inner: Box<dyn LinearOperator + 'a>,
    shift: f64,
}

impl LinearOperator for Shifted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.inner.apply(v, out);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += self.shift * vi;
        }
    }
}

impl<O: Objective + ?Sized> Objective for AugmentedObjective<'_, O> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.base.value(x)? + 0.5 * self.rho * norm_sq(&self.gap(x)))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.base.gradient(x)?;
        for (gi, ri) in g.iter_mut().zip(self.gap(x)) {
            *gi -= self.rho * ri;
        }
        Ok(g)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, mut g) = self.base.value_and_gradient(x)?;
        let gap = self.gap(x);
        for (gi, ri) in g.iter_mut().zip(&gap) {
            *gi -= self.rho * ri;
        }
        Ok((f + 0.5 * self.rho * norm_sq(&gap), g))
    }

    fn hessian<'s>(&'s self, x: &[f64]) -> Result<Box<dyn LinearOperator + 's>> {
        Ok(Box::new(Shifted {
            inner: self.base.hessian(x)?,
            shift: self.rho,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Quadratic;

    #[test]
    fn closed_form_on_scalar_quadratic() {
        // f(x) = x^2, rho = 2, z = 1, y = 2: value(0) = 0 + 1 * (1 + 1)^2 = 4
        let q = Quadratic::diagonal(&[2.0]);
        let aug = AugmentedObjective::new(&q, 2.0, &[1.0], &[2.0]).unwrap();
        assert_eq!(aug.value(&[0.0]).unwrap(), 4.0);
        assert_eq!(aug.gradient(&[0.0]).unwrap(), vec![-4.0]);
        assert_eq!(aug.hessian_vec(&[0.0], &[1.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn rejects_nonpositive_rho() {
        let q = Quadratic::diagonal(&[1.0]);
        assert!(AugmentedObjective::new(&q, 0.0, &[0.0], &[0.0]).is_err());
    }
}
