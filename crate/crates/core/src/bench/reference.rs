use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, SoftmaxObjective};
use crate::solver::{newton_solve, NewtonConfig};

/// High-precision single-node optimum used to compute theta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub lambda: f64,
    pub n: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub weights: Vec<f64>,
}

/// Newton to `|g| < 1e-10` with near-exact CG solves. Fails when the budget
/// runs out before that.
pub fn compute_reference(data: &Dataset, lambda: f64) -> Result<Reference> {
    compute_reference_with(data, lambda, &NewtonConfig::reference())
}

pub fn compute_reference_with(data: &Dataset, lambda: f64, cfg: &NewtonConfig) -> Result<Reference> {
    let obj = SoftmaxObjective::new(data, lambda)?;
    let out = newton_solve(&obj, vec![0.0; data.dim()], cfg)?;
    let grad_norm = out.grad_norm.unwrap_or(f64::NAN);
    if !out.converged {
        return Err(Error::NotConverged(format!(
            "reference solve stopped after {} Newton iterations with |g| = {grad_norm:.3e} \
             (target {:.0e}); raise the iteration budget",
            out.trace.len(),
            cfg.grad_tol
        )));
    }
    info!(
        "reference: F* = {:.12e}, |g| = {grad_norm:.3e} after {} iterations",
        out.objective,
        out.trace.len()
    );
    Ok(Reference {
        lambda,
        n: data.n(),
        num_features: data.p(),
        num_classes: data.num_classes(),
        objective: out.objective,
        grad_norm,
        iterations: out.trace.len(),
        weights: out.x,
    })
}

impl Reference {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read reference {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that the reference was computed for this problem.
    pub fn check_matches(&self, data: &Dataset, lambda: f64) -> Result<()> {
        if self.lambda != lambda {
            return Err(Error::config(format!(
                "reference was computed with lambda {} but the run uses {lambda}",
                self.lambda
            )));
        }
        if (self.n, self.num_features, self.num_classes) != (data.n(), data.p(), data.num_classes()) {
            return Err(Error::config(format!(
                "reference is for n={} p={} C={} but the data has n={} p={} C={}",
                self.n,
                self.num_features,
                self.num_classes,
                data.n(),
                data.p(),
                data.num_classes()
            )));
        }
        if !(self.objective > 0.0) {
            return Err(Error::input(format!("reference objective {} is not positive", self.objective)));
        }
        Ok(())
    }
}
