//! Softmax cross-entropy with a reference class.
//!
//! With `C` classes only `C - 1` weight blocks are free; class `C` has its
//! logit pinned at zero. For an observation `a` with logits
//! `l_c = <a, x_c>`, `c < C`:
//!
//! ```text
//! M(a)     = max(0, l_1, ..., l_{C-1})
//! alpha(a) = exp(-M) + sum_c exp(l_c - M)            (>= 1)
//! loss     = sum_i [ M_i + ln alpha_i - l_{i, b_i} ]  + (lambda/2) |x|^2
//! h_c(a)   = exp(l_c - M) / alpha                    (class probabilities)
//! ```
//!
//! Every exponent handed to `exp` is non-positive, so nothing overflows no
//! matter how large the logits get.
//!
//! Work is split into fixed-size row blocks that may run in parallel; block
//! partials are always reduced in block order, so results are bitwise
//! independent of the thread count.

use std::ops::Range;

use rayon::prelude::*;

use super::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, norm_sq};
use crate::solver::{LinearOperator, Objective};

const ROW_BLOCK: usize = 256;

fn row_blocks(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(ROW_BLOCK))
        .map(|b| b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(n))
        .collect()
}

fn sum_partials(parts: Vec<Vec<f64>>, d: usize) -> Vec<f64> {
    let mut total = vec![0.0; d];
    for part in parts {
        for (t, v) in total.iter_mut().zip(&part) {
            *t += v;
        }
    }
    total
}

/// Tracks the largest exponent passed to `exp` on the current thread, so
/// tests can assert the stabilised path never exponentiates a positive
/// number.
pub mod exp_audit {
    use std::cell::Cell;

    thread_local! {
        static MAX_EXPONENT: Cell<f64> = const { Cell::new(f64::NEG_INFINITY) };
    }

    pub fn reset() {
        MAX_EXPONENT.with(|m| m.set(f64::NEG_INFINITY));
    }

    /// Largest exponent recorded since the last [`reset`]; `-inf` if none.
    pub fn max_exponent() -> f64 {
        MAX_EXPONENT.with(Cell::get)
    }

    pub(super) fn record(e: f64) {
        MAX_EXPONENT.with(|m| {
            if e > m.get() || e.is_nan() {
                m.set(e)
            }
        });
    }
}

/// Per-row stabilisation data at a fixed weight vector: logits, row maxima
/// `M`, normalisers `alpha` and the class-probability matrix `W`
/// (`n x (C-1)`, row-major).
#[derive(Debug, Clone)]
pub struct StableExpCache {
    free_classes: usize,
    logits: Vec<f64>,
    row_max: Vec<f64>,
    normalizer: Vec<f64>,
    probs: Vec<f64>,
    max_exponent: f64,
}

struct BlockCache {
    logits: Vec<f64>,
    row_max: Vec<f64>,
    normalizer: Vec<f64>,
    probs: Vec<f64>,
    max_exponent: f64,
}

impl StableExpCache {
    pub fn new(data: &Dataset, w: &[f64]) -> Result<Self> {
        check_dim("weights", data.dim(), w.len())?;
        let p = data.p();
        let k = data.num_classes() - 1;
        let blocks: Vec<BlockCache> = row_blocks(data.n())
            .into_par_iter()
            .map(|rows| {
                let len = rows.len();
                let mut out = BlockCache {
                    logits: Vec::with_capacity(len * k),
                    row_max: Vec::with_capacity(len),
                    normalizer: Vec::with_capacity(len),
                    probs: Vec::with_capacity(len * k),
                    max_exponent: f64::NEG_INFINITY,
                };
                for i in rows {
                    let row = data.row(i);
                    let start = out.logits.len();
                    out.logits
                        .extend(w.chunks_exact(p).map(|block| row.dot(block)));
                    let logits = &out.logits[start..];
                    let m = logits.iter().fold(0.0_f64, |acc, &l| acc.max(l));
                    let mut alpha = (-m).exp();
                    let mut top = -m;
                    for &l in logits {
                        let e = l - m;
                        top = top.max(e);
                        let ex = e.exp();
                        alpha += ex;
                        out.probs.push(ex);
                    }
                    for h in &mut out.probs[start..] {
                        *h /= alpha;
                    }
                    out.max_exponent = out.max_exponent.max(top);
                    out.row_max.push(m);
                    out.normalizer.push(alpha);
                }
                out
            })
            .collect();

        let n = data.n();
        let mut cache = StableExpCache {
            free_classes: k,
            logits: Vec::with_capacity(n * k),
            row_max: Vec::with_capacity(n),
            normalizer: Vec::with_capacity(n),
            probs: Vec::with_capacity(n * k),
            max_exponent: f64::NEG_INFINITY,
        };
        for b in blocks {
            cache.logits.extend(b.logits);
            cache.row_max.extend(b.row_max);
            cache.normalizer.extend(b.normalizer);
            cache.probs.extend(b.probs);
            cache.max_exponent = cache.max_exponent.max(b.max_exponent);
        }
        if cache.logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("softmax logits".into()));
        }
        exp_audit::record(cache.max_exponent);
        Ok(cache)
    }

    pub fn logits(&self, i: usize) -> &[f64] {
        &self.logits[i * self.free_classes..(i + 1) * self.free_classes]
    }

    /// Row `i` of the probability matrix `W`: `h(a_i, x_c)` for `c < C`.
    pub fn probabilities(&self, i: usize) -> &[f64] {
        &self.probs[i * self.free_classes..(i + 1) * self.free_classes]
    }

    pub fn row_max(&self) -> &[f64] {
        &self.row_max
    }

    pub fn normalizer(&self) -> &[f64] {
        &self.normalizer
    }

    /// Largest exponent evaluated while building this cache.
    pub fn max_exponent(&self) -> f64 {
        self.max_exponent
    }

    fn row_loss(&self, i: usize, label: u32) -> f64 {
        let b = label as usize;
        let own = if b <= self.free_classes {
            self.logits(i)[b - 1]
        } else {
            0.0
        };
        self.row_max[i] + self.normalizer[i].ln() - own
    }
}

fn regularization(w: &[f64], lambda: f64) -> f64 {
    0.5 * lambda * norm_sq(w)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("lambda must be finite and >= 0, got {lambda}")))
    }
}

fn loss_with_cache(data: &Dataset, cache: &StableExpCache, w: &[f64], lambda: f64) -> f64 {
    let partials: Vec<f64> = row_blocks(data.n())
        .into_par_iter()
        .map(|rows| {
            rows.map(|i| cache.row_loss(i, data.labels()[i]))
                .sum::<f64>()
        })
        .collect();
    partials.iter().sum::<f64>() + regularization(w, lambda)
}

fn gradient_with_cache(data: &Dataset, cache: &StableExpCache, w: &[f64], lambda: f64) -> Vec<f64> {
    let p = data.p();
    let d = data.dim();
    let partials: Vec<Vec<f64>> = row_blocks(data.n())
        .into_par_iter()
        .map(|rows| {
            let mut g = vec![0.0; d];
            for i in rows {
                let row = data.row(i);
                let label = data.labels()[i] as usize;
                for (c, (&h, block)) in cache
                    .probabilities(i)
                    .iter()
                    .zip(g.chunks_exact_mut(p))
                    .enumerate()
                {
                    let coeff = if c + 1 == label { h - 1.0 } else { h };
                    row.axpy(coeff, block);
                }
            }
            g
        })
        .collect();
    let mut g = sum_partials(partials, d);
    if lambda != 0.0 {
        axpy(lambda, w, &mut g);
    }
    g
}

/// Regularised cross-entropy loss `sum_i f_i(w) + (lambda/2)|w|^2`.
pub fn loss(data: &Dataset, w: &[f64], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let cache = StableExpCache::new(data, w)?;
    Ok(loss_with_cache(data, &cache, w, lambda))
}

/// Gradient of [`loss`]; block `c` is `sum_i (h_c(a_i) - 1[b_i = c]) a_i + lambda x_c`.
pub fn gradient(data: &Dataset, w: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let cache = StableExpCache::new(data, w)?;
    Ok(gradient_with_cache(data, &cache, w, lambda))
}

pub fn loss_and_gradient(data: &Dataset, w: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    check_lambda(lambda)?;
    let cache = StableExpCache::new(data, w)?;
    Ok((
        loss_with_cache(data, &cache, w, lambda),
        gradient_with_cache(data, &cache, w, lambda),
    ))
}

/// Matrix-free Hessian of the loss at a fixed point.
///
/// Holds only the probability matrix `W`. Each application forms, row by
/// row, `V_i = (<a_i, v_c>)_c`, `U_i = V_i∘W_i - W_i (V_i·W_i)` and
/// accumulates `a_i U_iᵀ` into the result, so the `d x d` Hessian is never
/// built.
pub struct SoftmaxHessian<'a> {
    data: &'a Dataset,
    cache: StableExpCache,
    lambda: f64,
}

impl<'a> SoftmaxHessian<'a> {
    pub fn new(data: &'a Dataset, w: &[f64], lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            data,
            cache: StableExpCache::new(data, w)?,
            lambda,
        })
    }

    pub fn cache(&self) -> &StableExpCache {
        &self.cache
    }
}

impl LinearOperator for SoftmaxHessian<'_> {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let data = self.data;
        let p = data.p();
        let d = data.dim();
        let k = data.num_classes() - 1;
        let partials: Vec<Vec<f64>> = row_blocks(data.n())
            .into_par_iter()
            .map(|rows| {
                let mut acc = vec![0.0; d];
                let mut vw = vec![0.0; k];
                for i in rows {
                    let row = data.row(i);
                    let w_row = self.cache.probabilities(i);
                    let mut s = 0.0;
                    for ((slot, block), &h) in vw.iter_mut().zip(v.chunks_exact(p)).zip(w_row) {
                        *slot = row.dot(block) * h;
                        s += *slot;
                    }
                    for ((&vwc, &h), block) in vw.iter().zip(w_row).zip(acc.chunks_exact_mut(p)) {
                        row.axpy(vwc - h * s, block);
                    }
                }
                acc
            })
            .collect();
        let hv = sum_partials(partials, d);
        out.copy_from_slice(&hv);
        if self.lambda != 0.0 {
            axpy(self.lambda, v, out);
        }
    }
}

/// Hessian-vector product of [`loss`] at `w`.
pub fn hessian_vec(data: &Dataset, w: &[f64], v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_dim("hessian_vec direction", data.dim(), v.len())?;
    let h = SoftmaxHessian::new(data, w, lambda)?;
    Ok(h.apply_vec(v))
}

/// Most probable class per row (1-based); ties go to the smallest class id.
pub fn predict(data: &Dataset, w: &[f64]) -> Result<Vec<u32>> {
    check_dim("weights", data.dim(), w.len())?;
    let p = data.p();
    let c_ref = data.num_classes() as u32;
    Ok((0..data.n())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let mut best = (f64::NEG_INFINITY, c_ref);
            for (c, block) in w.chunks_exact(p).enumerate() {
                let l = row.dot(block);
                if l > best.0 {
                    best = (l, c as u32 + 1);
                }
            }
            // reference class has logit 0 and only wins strict comparisons
            if 0.0 > best.0 {
                best.1 = c_ref;
            }
            best.1
        })
        .collect())
}

/// Fraction of positions where `predicted == truth`.
pub fn accuracy(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    check_dim("label vectors", truth.len(), predicted.len())?;
    if truth.is_empty() {
        return Err(Error::input("accuracy of empty label vectors"));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// The regularised loss over a dataset as a solver [`Objective`].
///
/// ADMM workers use `lambda = 0`, since the regulariser lives in the
/// consensus update; the global objective uses the configured `lambda`.
#[derive(Debug, Clone, Copy)]
pub struct SoftmaxObjective<'a> {
    data: &'a Dataset,
    lambda: f64,
}

impl<'a> SoftmaxObjective<'a> {
    pub fn new(data: &'a Dataset, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self { data, lambda })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Objective for SoftmaxObjective<'_> {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        loss(self.data, x, self.lambda)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        gradient(self.data, x, self.lambda)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        loss_and_gradient(self.data, x, self.lambda)
    }

    fn hessian<'s>(&'s self, x: &[f64]) -> Result<Box<dyn LinearOperator + 's>> {
        Ok(Box::new(SoftmaxHessian::new(self.data, x, self.lambda)?))
    }
}
