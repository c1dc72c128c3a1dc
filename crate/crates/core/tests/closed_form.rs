mod common;

use brainreg::ridge::*;
use brainreg::simulation::{simulate_sae, standard_normal_design};
use brainreg::stats::median;
use brainreg::data::RoiPartition;
use brainreg::sae::Hyperparameters;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn ols_matches_svd_solve() {
    let mut r = rng(1);
    let x = gaussian(30, 5, &mut r);
    let y = gaussian(30, 3, &mut r);
    let f = ols_fit(&x, &y).unwrap();
    let want = svd_least_squares(&x, &y).transpose();
    assert!(max_abs_diff(&f.coefficients, &want) < 1e-12);
    // σ̂² divisor T − P
    let resid = &y - &x * &want.transpose();
    for v in 0..3 {
        let s2 = resid.column(v).norm_squared() / 25.0;
        assert!((f.noise_variance[v] - s2).abs() < 1e-12 * s2.max(1.0));
    }
}

/// Gradient descent on RSS + λ‖β‖² with a step below 1/L.
fn descent_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let g = x.tr_mul(x);
    let c = x.tr_mul(y);
    let l = 2.0 * (g.clone().symmetric_eigenvalues().max() + lambda);
    let mut b = DVector::zeros(x.ncols());
    for _ in 0..200_000 {
        let grad = 2.0 * (&g * &b - &c) + 2.0 * lambda * &b;
        if grad.amax() < 1e-13 {
            break;
        }
        b -= grad / l;
    }
    b
}

#[test]
fn ridge_matches_penalized_objective_minimizer() {
    let mut r = rng(2);
    let x = gaussian(20, 4, &mut r);
    let y = gaussian(20, 1, &mut r);
    let f = ridge_fit(&x, &y, &[0.7]).unwrap();
    let oracle = descent_oracle(&x, &y.column(0).into_owned(), 0.7);
    for j in 0..4 {
        assert!((f.coefficients[(0, j)] - oracle[j]).abs() < 1e-6);
    }
}

#[test]
fn ridge_limits() {
    let mut r = rng(3);
    let x = gaussian(25, 4, &mut r);
    let y = gaussian(25, 2, &mut r);
    let ols = ols_fit(&x, &y).unwrap();
    let zero = ridge_fit(&x, &y, &[0.0, 0.0]).unwrap();
    let rel = (&ols.coefficients - &zero.coefficients).amax() / ols.coefficients.amax();
    assert!(rel < 1e-10);
    let huge = ridge_fit(&x, &y, &[1e12, 1e12]).unwrap();
    for v in 0..2 {
        let xty = x.tr_mul(&y.column(v)).norm();
        assert!(huge.coefficients.row(v).norm() < 1e-6 * xty);
    }
}

fn explicit_gcv(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Option<f64> {
    let t = x.nrows() as f64;
    let mut m = x.tr_mul(x);
    for j in 0..x.ncols() {
        m[(j, j)] += lambda;
    }
    let h = x * m.try_inverse().unwrap() * x.transpose();
    let resid = y - &h * y;
    let denom = 1.0 - h.trace() / t;
    (denom > 1e-12).then(|| (resid.norm_squared() / t) / (denom * denom))
}

#[test]
fn gcv_matches_hat_matrix() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let x = gaussian(15, 4, &mut r);
        let y = gaussian_vec(15, &mut r);
        let grid = default_ridge_grid(&x);
        let (_, curve) = gcv_select(&x, &y, &grid).unwrap();
        for (l, s) in grid.iter().zip(&curve.scores) {
            let want = explicit_gcv(&x, &y, *l).unwrap();
            assert!((s.unwrap() - want).abs() < 1e-8 * want.max(1.0));
        }
    }
}

#[test]
fn noiseless_response_picks_smallest_lambda() {
    let mut r = rng(5);
    let x = gaussian(40, 3, &mut r);
    let y = &x * DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let grid = default_ridge_grid(&x);
    let (l, _) = gcv_select(&x, &y, &grid).unwrap();
    assert_eq!(l, grid[0]);
}

#[test]
fn pure_noise_prefers_heavy_penalties() {
    let grid = brainreg::log_space(0.01, 1000.0, 21);
    let top_quartile = grid[grid.len() * 3 / 4];
    let mut hits = 0;
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let x = gaussian(200, 5, &mut r);
        let y = gaussian_vec(200, &mut r);
        let (l, _) = gcv_select(&x, &y, &grid).unwrap();
        if l >= top_quartile {
            hits += 1;
        }
    }
    assert!(hits >= 90, "{hits}/100 in the top quartile");
}

#[test]
fn cv_separates_signal_from_noise() {
    let mut r = rng(6);
    let x = gaussian(60, 4, &mut r);
    let mut y = DMatrix::zeros(60, 2);
    y.set_column(0, &(&x * DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5])));
    y.set_column(1, &gaussian_vec(60, &mut r));
    let grid = default_ridge_grid(&x);
    let (_, map) = ridge_fit_cv(&x, &y, &grid).unwrap();
    assert!(map.per_voxel[1].ridge_lambda.unwrap() > map.per_voxel[0].ridge_lambda.unwrap());
}

#[test]
fn cv_with_one_grid_point_is_plain_ridge() {
    let mut r = rng(7);
    let x = gaussian(30, 3, &mut r);
    let y = gaussian(30, 4, &mut r);
    let (f, _) = ridge_fit_cv(&x, &y, &[2.5]).unwrap();
    assert_eq!(f, ridge_fit(&x, &y, &[2.5; 4]).unwrap());
}

#[test]
fn single_voxel_cv_is_the_composition() {
    let mut r = rng(8);
    let x = gaussian(30, 3, &mut r);
    let y = gaussian(30, 1, &mut r);
    let grid = default_ridge_grid(&x);
    let (l, _) = gcv_select(&x, &y.column(0).into_owned(), &grid).unwrap();
    let (f, map) = ridge_fit_cv(&x, &y, &grid).unwrap();
    assert_eq!(map.per_voxel[0].ridge_lambda, Some(l));
    assert_eq!(f, ridge_fit(&x, &y, &[l]).unwrap());
}

#[test]
fn ridge_reduces_standard_errors_on_simulated_data() {
    let x = standard_normal_design(60, 11, 4);
    let p = RoiPartition::blocks(&[40; 5]).unwrap();
    let hyper = Hyperparameters { d: 0.1, f: 0.02, ..Default::default() };
    let (d, _) = simulate_sae(&x, &p, &hyper, 9).unwrap();
    let ols = ols_fit(&x, d.responses()).unwrap();
    let (ridge, _) = ridge_fit_cv(&x, d.responses(), &default_ridge_grid(&x)).unwrap();
    for j in 0..11 {
        let col = |m: &DMatrix<f64>| m.column(j).iter().copied().collect::<Vec<_>>();
        assert!(median(&col(&ridge.std_errors)) < median(&col(&ols.std_errors)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shrinkage_and_rss_are_monotone(seed in 0u64..10_000, t in 8usize..40, p in 1usize..6) {
        prop_assume!(t > p);
        let mut r = rng(seed);
        let x = gaussian(t, p, &mut r);
        let y = gaussian(t, 1, &mut r);
        let ladder = brainreg::log_space(1e-4, 1e4, 30);
        let fits: Vec<_> = ladder.iter().map(|&l| ridge_fit(&x, &y, &[l]).unwrap()).collect();
        for w in fits.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            prop_assert!(b.coefficients.row(0).norm() <= a.coefficients.row(0).norm() * (1.0 + 1e-12));
            let rss = |f: &brainreg::CoefficientField| (&y - &x * f.coefficients.transpose()).norm_squared();
            prop_assert!(rss(b) >= rss(a) * (1.0 - 1e-12));
        }
    }
}
