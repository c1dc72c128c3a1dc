mod common;

use brainreg::elastic_net::*;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn objective(x: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, l1: f64, l2: f64) -> f64 {
    (y - x * b).norm_squared() + l1 * b.lp_norm(1) + l2 * b.norm_squared()
}

/// Accelerated proximal gradient (FISTA) on the same objective.
fn proximal_oracle(x: &DMatrix<f64>, y: &DVector<f64>, l1: f64, l2: f64) -> DVector<f64> {
    let g = x.tr_mul(x);
    let lip = 2.0 * (g.clone().symmetric_eigenvalues().max() + l2);
    let step = 1.0 / lip;
    let p = x.ncols();
    let (mut b, mut z) = (DVector::zeros(p), DVector::zeros(p));
    let mut t = 1.0f64;
    for _ in 0..100_000 {
        let grad = 2.0 * (&g * &z - x.tr_mul(y)) + 2.0 * l2 * &z;
        let w = &z - step * grad;
        let next = w.map(|v| v.signum() * (v.abs() - step * l1).max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + (&next - &b) * ((t - 1.0) / t_next);
        if (&next - &b).amax() < 1e-15 {
            b = next;
            break;
        }
        b = next;
        t = t_next;
    }
    b
}

/// Textbook lasso coordinate descent on the raw residual.
fn minimal_lasso(x: &DMatrix<f64>, y: &DVector<f64>, l1: f64) -> DVector<f64> {
    let p = x.ncols();
    let mut b = DVector::zeros(p);
    for _ in 0..20_000 {
        for j in 0..p {
            let xj = x.column(j);
            let partial = y - x * &b + xj * b[j];
            let rho = xj.dot(&partial);
            let denom = xj.norm_squared();
            b[j] = rho.signum() * (rho.abs() - l1 / 2.0).max(0.0) / denom;
        }
    }
    b
}

#[test]
fn matches_proximal_oracle() {
    let mut r = rng(21);
    let x = gaussian(40, 6, &mut r);
    let y = gaussian_vec(40, &mut r);
    let sol = elastic_net_fit(&x, &y, 0.5, 0.3, 1e-12, 100_000).unwrap();
    let oracle = proximal_oracle(&x, &y, 0.5, 0.3);
    let (a, b) = (objective(&x, &y, &sol.beta, 0.5, 0.3), objective(&x, &y, &oracle, 0.5, 0.3));
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    assert!(GramProblem::new(&x, &y).unwrap().kkt_residual(&sol.beta, 0.5, 0.3) < 1e-6);
}

#[test]
fn no_l1_is_ridge() {
    let mut r = rng(22);
    let x = gaussian(30, 5, &mut r);
    let y = gaussian_vec(30, &mut r);
    let sol = elastic_net_fit(&x, &y, 0.0, 1.7, 1e-12, 100_000).unwrap();
    let mut m = x.tr_mul(&x);
    for j in 0..5 {
        m[(j, j)] += 1.7;
    }
    let ridge = m.cholesky().unwrap().solve(&x.tr_mul(&y));
    assert!((&sol.beta - ridge).amax() < 1e-6);
}

#[test]
fn lasso_agrees_with_minimal_implementation() {
    for seed in 0..10 {
        let mut r = rng(300 + seed);
        let x = gaussian(5, 3, &mut r);
        let y = gaussian_vec(5, &mut r);
        let l1 = 0.3 * GramProblem::new(&x, &y).unwrap().null_threshold();
        let sol = elastic_net_fit(&x, &y, l1, 0.0, 1e-12, 100_000).unwrap();
        let want = minimal_lasso(&x, &y, l1);
        assert!((&sol.beta - &want).amax() < 1e-6, "{} vs {}", sol.beta, want);
    }
}

#[test]
fn one_point_grids_give_the_standardized_fit() {
    let mut r = rng(23);
    let x = gaussian(40, 4, &mut r);
    let y = gaussian_vec(40, &mut r);
    let grids = EnGrids {
        lambda1: vec![0.4],
        lambda2: vec![0.2],
    };
    let (path, beta, b0) = elastic_net_cv(&x, &y, &grids, &EnCvOptions::default()).unwrap();
    assert_eq!(path.selected_values(), (0.4, 0.2));
    let (want, want0) = elastic_net_fit_standardized(&x, &y, 0.4, 0.2, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assert_eq!(beta, want);
    assert_eq!(b0, want0);
}

#[test]
fn cv_is_deterministic() {
    let mut r = rng(24);
    let x = gaussian(50, 5, &mut r);
    let y = gaussian_vec(50, &mut r);
    let grids = EnGrids::default_for(&x, &y);
    let opts = EnCvOptions {
        seed: 77,
        ..Default::default()
    };
    let a = elastic_net_cv(&x, &y, &grids, &opts).unwrap();
    let b = elastic_net_cv(&x, &y, &grids, &opts).unwrap();
    assert_eq!(a.0.to_csv(), b.0.to_csv());
    assert_eq!(a, b);
}

/// Minimum-MSE cross-validation is not selection consistent: it keeps the
/// true support but usually admits a few tiny spurious coefficients. We
/// check that the true support is always found and that anything else is
/// negligible next to it.
#[test]
fn sparse_truth_is_recovered() {
    let (mut recovered, mut exact) = (0, 0);
    for seed in 0..50 {
        let mut r = rng(5000 + seed);
        let x = gaussian(100, 10, &mut r);
        let mut beta = DVector::zeros(10);
        beta[2] = 2.0;
        beta[7] = -1.5;
        let y = &x * &beta + 0.1 * gaussian_vec(100, &mut r);
        let grids = EnGrids::default_for(&x, &y);
        let opts = EnCvOptions {
            seed,
            ..Default::default()
        };
        let (path, b, _) = elastic_net_cv(&x, &y, &grids, &opts).unwrap();
        let spurious = (0..10).filter(|&j| j != 2 && j != 7).map(|j| b[j].abs()).fold(0.0, f64::max);
        if path.selected_values().0 > 0.0 && b[2] != 0.0 && b[7] != 0.0 && spurious < 0.05 {
            recovered += 1;
        }
        if (0..10).all(|j| (b[j] != 0.0) == (beta[j] != 0.0)) {
            exact += 1;
        }
    }
    eprintln!("support recovered {recovered}/50, exact support {exact}/50");
    assert!(recovered >= 45, "{recovered}/50");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_never_increases(seed in 0u64..10_000, l1 in 0.0f64..5.0, l2 in 0.0f64..2.0) {
        let mut r = rng(seed);
        let x = gaussian(25, 6, &mut r);
        let y = gaussian_vec(25, &mut r);
        let sol = elastic_net_fit(&x, &y, l1, l2, 1e-10, 100_000).unwrap();
        for w in sol.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        prop_assert!(GramProblem::new(&x, &y).unwrap().kkt_residual(&sol.beta, l1, l2) < 1e-6);
    }

    #[test]
    fn sparsity_falls_as_l1_grows(seed in 0u64..10_000, l2 in 0.0f64..1.0) {
        let mut r = rng(seed);
        let x = gaussian(30, 8, &mut r);
        let y = gaussian_vec(30, &mut r);
        let top = GramProblem::new(&x, &y).unwrap().null_threshold();
        let ladder = brainreg::log_space(top * 1e-3, top, 15);
        let counts: Vec<usize> = ladder
            .iter()
            .map(|&l1| {
                let b = elastic_net_fit(&x, &y, l1, l2, 1e-12, 100_000).unwrap().beta;
                b.iter().filter(|v| **v != 0.0).count()
            })
            .collect();
        for w in counts.windows(2) {
            prop_assert!(w[1] <= w[0], "{:?}", counts);
        }
    }
}
