//! Small dense-vector helpers shared by the solvers.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Sums equal-length vectors with a fixed pairwise tree over their index
/// order, so the result depends only on the ordering of `parts`.
pub fn pairwise_sum(parts: &[Vec<f64>], len: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; len],
        1 => parts[0].clone(),
        n => {
            let mid = n.div_ceil(2);
            let mut left = pairwise_sum(&parts[..mid], len);
            let right = pairwise_sum(&parts[mid..], len);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

pub fn pairwise_sum_scalars(parts: &[f64]) -> f64 {
    match parts.len() {
        0 => 0.0,
        1 => parts[0],
        n => {
            let mid = n.div_ceil(2);
            pairwise_sum_scalars(&parts[..mid]) + pairwise_sum_scalars(&parts[mid..])
        }
    }
}
