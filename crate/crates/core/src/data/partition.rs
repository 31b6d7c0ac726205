use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionScheme {
    /// Worker `i` gets rows `[i*ceil(n/N), (i+1)*ceil(n/N))`.
    Contiguous,
    /// Row `j` goes to worker `j mod N`.
    Strided,
}

/// Assignment of dataset rows to workers: disjoint, covering, and non-empty
/// whenever `n >= N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    scheme: PartitionScheme,
    assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn new(scheme: PartitionScheme, n: usize, n_workers: usize) -> Result<Self> {
        if n_workers == 0 {
            return Err(Error::config("need at least one worker"));
        }
        if n < n_workers {
            return Err(Error::config(format!(
                "cannot split {n} rows across {n_workers} workers"
            )));
        }
        let assignments = match scheme {
            PartitionScheme::Contiguous => {
                let chunk = n.div_ceil(n_workers);
                if chunk * (n_workers - 1) < n {
                    (0..n_workers)
                        .map(|i| (i * chunk..((i + 1) * chunk).min(n)).collect())
                        .collect()
                } else {
                    // the ceiling rule would starve the last worker(s);
                    // balance instead, giving the first n mod N workers one extra row
                    let base = n / n_workers;
                    let extra = n % n_workers;
                    let mut start = 0;
                    (0..n_workers)
                        .map(|i| {
                            let len = base + usize::from(i < extra);
                            let rows = (start..start + len).collect();
                            start += len;
                            rows
                        })
                        .collect()
                }
            }
            PartitionScheme::Strided => (0..n_workers)
                .map(|i| (i..n).step_by(n_workers).collect())
                .collect(),
        };
        Ok(Self {
            scheme,
            assignments,
        })
    }

    pub fn scheme(&self) -> PartitionScheme {
        self.scheme
    }

    pub fn n_workers(&self) -> usize {
        self.assignments.len()
    }

    pub fn rows(&self, worker: usize) -> &[usize] {
        &self.assignments[worker]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Splits `data` into one dataset per worker following `plan`.
pub fn partition(data: &Dataset, plan: &PartitionPlan) -> Result<Vec<Dataset>> {
    let covered: usize = plan.sizes().iter().sum();
    if covered != data.n() {
        return Err(Error::config(format!(
            "partition plan covers {covered} rows but the dataset has {}",
            data.n()
        )));
    }
    plan.assignments
        .iter()
        .map(|rows| data.select_rows(rows))
        .collect()
}
