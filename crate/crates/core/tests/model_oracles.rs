mod common;

use common::{fd_hessian, mat_vec_cols, random_instance, random_vec, rel_err, rel_err_scalar, rng};
use newton_admm::linalg::dot;
use newton_admm::model::{exp_audit, gradient, hessian_vec, loss, loss_and_gradient, Dataset};
use proptest::prelude::*;

fn fixed_instance() -> (Dataset, Vec<f64>) {
    let rows = vec![vec![0.5, -1.0], vec![2.0, 0.25], vec![-1.5, 3.0]];
    let data = Dataset::dense(&rows, vec![1, 3, 2], 3).unwrap();
    (data, vec![0.3, -0.7, 1.1, 0.4])
}

// 50-digit values for the fixed instance
const FIXED_LOSS: f64 = 4.180_013_786_311_312_969_2;
const FIXED_GRAD: [f64; 4] = [
    -0.060_728_899_110_196_434_812,
    0.640_361_618_357_616_573_03,
    2.677_976_341_690_758_643,
    -1.939_753_912_298_040_494_1,
];

#[test]
fn fixed_instance_matches_extended_precision() {
    let (data, w) = fixed_instance();
    let (f, g) = loss_and_gradient(&data, &w, 0.01).unwrap();
    assert!(rel_err_scalar(f, FIXED_LOSS) < 1e-14, "{f}");
    assert!(rel_err(&g, &FIXED_GRAD) < 1e-14, "{g:?}");
}

#[test]
fn saturated_logit_matches_extended_precision() {
    let data = Dataset::dense(&[vec![1000.0]], vec![2], 2).unwrap();
    exp_audit::reset();
    assert_eq!(loss(&data, &[1.0], 0.0).unwrap(), 1000.0);
    let g = gradient(&data, &[1.0], 0.0).unwrap();
    assert_eq!(g, vec![1000.0]);
    assert!(exp_audit::max_exponent() <= 0.0);
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(11);
    for _ in 0..10 {
        let (data, w) = random_instance(&mut r, 30, 6, 4);
        let g = gradient(&data, &w, 1e-3).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..w.len())
            .map(|j| {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += h;
                wm[j] -= h;
                (loss(&data, &wp, 1e-3).unwrap() - loss(&data, &wm, 1e-3).unwrap()) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&g, &fd) < 1e-6);
    }
}

#[test]
fn sparse_and_dense_agree() {
    let mut r = rng(12);
    let (dense, w) = random_instance(&mut r, 40, 8, 5);
    let sparse = dense.to_sparse();
    let v = random_vec(&mut r, w.len());
    assert!(rel_err_scalar(loss(&sparse, &w, 1e-5).unwrap(), loss(&dense, &w, 1e-5).unwrap()) < 1e-13);
    assert!(rel_err(&gradient(&sparse, &w, 1e-5).unwrap(), &gradient(&dense, &w, 1e-5).unwrap()) < 1e-13);
    assert!(
        rel_err(
            &hessian_vec(&sparse, &w, &v, 1e-5).unwrap(),
            &hessian_vec(&dense, &w, &v, 1e-5).unwrap()
        ) < 1e-13
    );
}

#[test]
fn hessian_vec_matches_fd_hessian() {
    let mut r = rng(13);
    let (data, w) = random_instance(&mut r, 15, 4, 3);
    let v = random_vec(&mut r, w.len());
    let h = fd_hessian(&data, &w, 0.5, 1e-5);
    let hv = hessian_vec(&data, &w, &v, 0.5).unwrap();
    assert!(rel_err(&hv, &mat_vec_cols(&h, &v)) < 1e-6);
}

#[test]
fn weights_far_from_origin_stay_finite() {
    let mut r = rng(14);
    let (data, w) = random_instance(&mut r, 20, 5, 4);
    let big: Vec<f64> = w.iter().map(|x| x * 1e4).collect();
    exp_audit::reset();
    let (f, g) = loss_and_gradient(&data, &big, 1e-5).unwrap();
    let hv = hessian_vec(&data, &big, &w, 1e-5).unwrap();
    assert!(f.is_finite() && g.iter().chain(&hv).all(|x| x.is_finite()));
    assert!(exp_audit::max_exponent() <= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hessian_is_symmetric_psd_and_linear(seed in 0u64..10_000, c in 2usize..5, p in 1usize..6, a in -3.0f64..3.0) {
        let mut r = rng(seed);
        let (data, w) = random_instance(&mut r, 12, p, c);
        let u = random_vec(&mut r, w.len());
        let v = random_vec(&mut r, w.len());
        let hu = hessian_vec(&data, &w, &u, 0.0).unwrap();
        let hv = hessian_vec(&data, &w, &v, 0.0).unwrap();
        let scale = (dot(&u, &u) * dot(&v, &v)).sqrt() * 12.0;
        prop_assert!((dot(&u, &hv) - dot(&v, &hu)).abs() <= 1e-12 * scale.max(1.0));
        prop_assert!(dot(&v, &hv) >= -1e-12 * dot(&v, &v));
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + y).collect();
        let hc = hessian_vec(&data, &w, &combo, 0.0).unwrap();
        let expect: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| a * x + y).collect();
        prop_assert!(rel_err(&hc, &expect) < 1e-12 || expect.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn regulariser_shifts_value_and_gradient_exactly(seed in 0u64..10_000, lam in 0.0f64..2.0) {
        let mut r = rng(seed);
        let (data, w) = random_instance(&mut r, 10, 3, 3);
        let (f0, g0) = loss_and_gradient(&data, &w, 0.0).unwrap();
        let (f1, g1) = loss_and_gradient(&data, &w, lam).unwrap();
        prop_assert!(rel_err_scalar(f1 - f0, 0.5 * lam * dot(&w, &w)) < 1e-10 || lam == 0.0);
        for ((a, b), x) in g1.iter().zip(&g0).zip(&w) {
            prop_assert!((a - b - lam * x).abs() < 1e-12);
        }
    }
}
