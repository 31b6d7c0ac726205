//! Multiclass softmax model: data containers and the stabilised
//! cross-entropy loss with its derivatives.

mod dataset;
pub mod softmax;

pub use dataset::{CsrMatrix, Dataset, DenseMatrix, FeatureMatrix, Row, Weights};
pub use softmax::{
    accuracy, exp_audit, gradient, hessian_vec, loss, loss_and_gradient, predict, SoftmaxHessian,
    SoftmaxObjective, StableExpCache,
};
