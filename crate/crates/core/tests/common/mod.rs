#![allow(dead_code)]

use newton_admm::model::{gradient, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense instance with features and weights drawn from `[-1, 1]`.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize, c: usize) -> (Dataset, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = (0..n).map(|_| rng.random_range(1..=c as u32)).collect();
    let data = Dataset::dense(&rows, labels, c).unwrap();
    let w = random_vec(rng, (c - 1) * p);
    (data, w)
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

pub fn rel_err_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Explicit Hessian, column `j` = central difference of the gradient
/// along `e_j`.
pub fn fd_hessian(data: &Dataset, w: &[f64], lambda: f64, h: f64) -> Vec<Vec<f64>> {
    let d = w.len();
    let mut cols = Vec::with_capacity(d);
    for j in 0..d {
        let mut wp = w.to_vec();
        let mut wm = w.to_vec();
        wp[j] += h;
        wm[j] -= h;
        let gp = gradient(data, &wp, lambda).unwrap();
        let gm = gradient(data, &wm, lambda).unwrap();
        cols.push(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>());
    }
    cols
}

pub fn mat_vec_cols(cols: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols[0].len()];
    for (col, vj) in cols.iter().zip(v) {
        for (o, c) in out.iter_mut().zip(col) {
            *o += c * vj;
        }
    }
    out
}
