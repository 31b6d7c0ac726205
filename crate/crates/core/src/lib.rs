//! Distributed consensus ADMM with an inexact Newton-CG subproblem solver
//! for multiclass softmax classification.
//!
//! * [`model`]: stabilised softmax cross-entropy, gradient, matrix-free
//!   Hessian-vector products and prediction.
//! * [`solver`]: truncated CG, Armijo backtracking and inexact Newton.
//! * [`admm`]: global-consensus ADMM coordinator with fixed or spectral
//!   penalties.
//! * [`comm`]: scatter/gather transports (in-process and TCP) with message
//!   accounting.
//! * [`worker`]: the worker-side loop shared by every transport.
//! * [`data`]: LIBSVM / CSV / IDX loaders, partitioning and synthetic data.
//! * [`baselines`]: L-BFGS inner solver and synchronous SGD.
//! * [`bench`]: experiment driver, metrics and scaling sweeps.

pub mod admm;
pub mod baselines;
pub mod bench;
pub mod comm;
pub mod data;
pub mod error;
pub mod linalg;
pub mod model;
pub mod solver;
pub mod worker;

pub use error::{Error, Result};
