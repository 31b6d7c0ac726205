//! Comparison solvers: L-BFGS (usable as the ADMM inner solver) and
//! synchronous mini-batch SGD.

mod lbfgs;
mod sgd;

pub use lbfgs::{lbfgs_solve, LbfgsConfig, LbfgsIterate, LbfgsOutcome, FALLBACK_STEP};
pub use sgd::{
    step_size_grid, sync_sgd, BatchSchedule, MiniBatchObjective, SgdConfig, SgdEpoch, SgdOutcome,
    SoftmaxBatch, DIVERGENCE_FACTOR,
};
