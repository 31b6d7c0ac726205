use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, DenseMatrix, FeatureMatrix};

/// Gaussian class clusters. Class `c` is centred at `separation * u_c` for a
/// random unit vector `u_c`; samples add isotropic noise of standard
/// deviation `noise`. Labels are balanced and shuffled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub num_classes: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            p: 20,
            num_classes: 4,
            separation: 10.0,
            noise: 0.1,
            seed: 42,
        }
    }
}

/// Draws `n` samples and splits them 90/10 into (train, test); the test
/// part is the last `max(1, n/10)` samples.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    let SyntheticSpec {
        n,
        p,
        num_classes,
        separation,
        noise,
        seed,
    } = *spec;
    if num_classes < 2 {
        return Err(Error::config("synthetic data needs at least two classes"));
    }
    if p == 0 {
        return Err(Error::config("synthetic data needs at least one feature"));
    }
    if num_classes > n {
        return Err(Error::config(format!(
            "cannot draw {num_classes} classes from {n} samples"
        )));
    }
    let n_test = (n / 10).max(1);
    if n - n_test < 1 {
        return Err(Error::config(format!("n = {n} leaves no training rows")));
    }
    if !(separation >= 0.0 && noise >= 0.0) {
        return Err(Error::config("separation and noise must be non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let g: Vec<f64> = (0..p).map(|_| gauss()).collect();
            let len = crate::linalg::norm(&g).max(f64::MIN_POSITIVE);
            g.iter().map(|v| separation * v / len).collect()
        })
        .collect();
    let mut labels: Vec<u32> = (0..n).map(|i| (i % num_classes) as u32 + 1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * p);
    for &b in &labels {
        let center = &centers[b as usize - 1];
        features.extend(center.iter().map(|c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            c + noise * z
        }));
    }

    let n_train = n - n_test;
    let split = n_train * p;
    let test_features = features.split_off(split);
    let test_labels = labels.split_off(n_train);
    let train = Dataset::new(
        FeatureMatrix::Dense(DenseMatrix::new(n_train, p, features)?),
        labels,
        num_classes,
    )?;
    let test = Dataset::new(
        FeatureMatrix::Dense(DenseMatrix::new(n_test, p, test_features)?),
        test_labels,
        num_classes,
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec::default();
        let (a, at) = generate_synthetic(&spec).unwrap();
        let (b, bt) = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(at, bt);
        let (c, _) = generate_synthetic(&SyntheticSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_sizes_and_balance() {
        let (train, test) = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!((train.n(), test.n()), (900, 100));
        let mut counts = [0usize; 4];
        for &b in train.labels().iter().chain(test.labels()) {
            counts[b as usize - 1] += 1;
        }
        assert_eq!(counts, [250; 4]);
    }

    #[test]
    fn more_classes_than_rows_is_an_error() {
        let spec = SyntheticSpec {
            n: 3,
            num_classes: 4,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }
}
