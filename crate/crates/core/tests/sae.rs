mod common;

use brainreg::data::RoiPartition;
use brainreg::sae::checks::{conditional_checks, ig_check, CheckConfig};
use brainreg::sae::*;
use brainreg::simulation::{experiment_hyperparameters, simulate_sae, standard_normal_design};
use brainreg::stats::InverseGamma;
use common::*;
use nalgebra::{DMatrix, DVector};

fn small_problem(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, RoiPartition) {
    let part = RoiPartition::blocks(&[6, 6]).unwrap();
    let x = standard_normal_design(40, 4, seed);
    let (data, _) = simulate_sae(&x, &part, &Hyperparameters::default(), seed + 1).unwrap();
    (x, data.responses().clone(), part)
}

#[test]
fn same_seed_same_posterior() {
    let (x, y, part) = small_problem(3);
    let cfg = SaeConfig {
        burn_in: 20,
        thin: 2,
        samples: 30,
        seed: 11,
        ..Default::default()
    };
    let a = sae_fit(&x, &y, &part, &cfg).unwrap();
    let b = sae_fit(&x, &y, &part, &cfg).unwrap();
    assert_eq!(a.summary, b.summary);
    let c = sae_fit(&x, &y, &part, &SaeConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.summary.beta_mean, c.summary.beta_mean);
}

#[test]
fn fit_outputs_are_consistent() {
    let (x, y, part) = small_problem(4);
    let cfg = SaeConfig {
        burn_in: 10,
        thin: 1,
        samples: 25,
        ..Default::default()
    };
    let fit = sae_fit(&x, &y, &part, &cfg).unwrap();
    assert_eq!(fit.field.coefficients, fit.summary.beta_mean);
    assert_eq!(fit.field.std_errors, fit.summary.beta_sd);
    assert!(fit.summary.beta_sd.iter().all(|s| *s >= 0.0));
    assert_eq!(fit.summary.sample_count, 25);
    for (r, n) in fit.regularization.per_voxel.iter().zip(fit.summary.nu2_mean.iter()) {
        assert_eq!(r.posterior_nu2, Some(*n));
    }
    assert!(fit.summary.final_state.check_invariants());
    let csv = String::from_utf8(fit.summary.diagnostics.to_csv()).unwrap();
    assert!(csv.starts_with("statistic,lag1_autocorrelation\n"));
}

#[test]
fn zero_samples_is_rejected() {
    let (x, y, part) = small_problem(5);
    let cfg = SaeConfig {
        samples: 0,
        ..Default::default()
    };
    assert!(sae_fit(&x, &y, &part, &cfg).is_err());
}

#[test]
fn sweeps_keep_variances_positive_and_beta_decomposition() {
    let (x, y, part) = small_problem(6);
    let hyper = Hyperparameters::default();
    let mut state = GibbsState::initial(12, 2, 4, &hyper);
    let mut rng = GibbsRng::new(1, 12, 2);
    for _ in 0..50 {
        gibbs_sweep(&mut state, &x, &y, &part, &hyper, &mut rng).unwrap();
        assert!(state.check_invariants());
    }
    let beta = state.beta(&part);
    for v in 0..12 {
        let a = part.area_of(v);
        for j in 0..4 {
            assert_eq!(beta[(v, j)], state.u[(a, j)] + state.z[(v, j)]);
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let (x, y, part) = small_problem(7);
    let hyper = Hyperparameters::default();
    let mut state = GibbsState::initial(12, 2, 4, &hyper);
    let mut rng = GibbsRng::new(2, 12, 2);
    gibbs_sweep(&mut state, &x, &y, &part, &hyper, &mut rng).unwrap();
    let bytes = state.to_checkpoint();
    assert_eq!(GibbsState::from_checkpoint(&bytes).unwrap(), state);
    assert!(GibbsState::from_checkpoint(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn identity_gram_halves_the_z_covariance() {
    let cov = z_conditional_covariance(&DMatrix::identity(3, 3), 1.0, 1.0);
    assert!((cov - DMatrix::identity(3, 3) * 0.5).amax() < 1e-15);
}

#[test]
fn conditional_shapes_follow_the_update_formulas() {
    let h = Hyperparameters {
        a: 1.0,
        ..Default::default()
    };
    assert_eq!(sigma2_conditional(&h, 60, 0.0).shape, 31.0);
    assert_eq!(nu2_conditional(&Hyperparameters::default(), 11, 0.0).shape, 8.5);
    assert_eq!(alpha2_conditional(&Hyperparameters::default(), 4, 0.0).shape, 5.0);
    // no rows: the σ² conditional is its prior
    let prior = sigma2_conditional(&Hyperparameters::default(), 0, 0.0);
    assert_eq!((prior.shape, prior.scale), (3.0, 2.0));
}

#[test]
fn inverse_gamma_mean_check() {
    // c = 3, P = 4: shape 5, so the mean is scale / 4
    let ig = alpha2_conditional(&Hyperparameters::default(), 4, 6.0);
    assert_eq!(ig.shape, 5.0);
    assert!((ig.mean() - ig.scale / 4.0).abs() < 1e-15);
    let check = ig_check("alpha2", ig, 20_000, &mut rng(9));
    assert!(check.pass, "{check:?}");
    assert_eq!(InverseGamma::new(5.0, 8.0).mean(), 2.0);
}

#[test]
fn joint_distribution_test_small() {
    let part = RoiPartition::blocks(&[2, 2]).unwrap();
    let x = standard_normal_design(10, 2, 21);
    let report = conditional_checks(
        &x,
        &part,
        &CheckConfig {
            draws: 4000,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    for c in &report.joint {
        assert!(c.z.abs() < 4.0, "{c:?}");
    }
}

#[test]
fn oversized_check_instance_is_rejected() {
    let part = RoiPartition::blocks(&[6, 6]).unwrap();
    let x = standard_normal_design(10, 2, 0);
    assert!(conditional_checks(&x, &part, &CheckConfig::default()).is_err());
}

/// With ν² pinned large and α² pinned tiny, area pooling vanishes and the
/// posterior mean of each voxel is a ridge fit with `λ = σ²/ν²`. The oracle
/// solves those normal equations directly.
#[test]
fn extreme_hyperparameters_reduce_to_ridge() {
    let part = RoiPartition::blocks(&[25, 25]).unwrap();
    let x = standard_normal_design(100, 5, 31);
    let mut r = rng(32);
    let beta = gaussian(5, 50, &mut r);
    let y = &x * &beta + 0.5 * gaussian(100, 50, &mut r);
    let hyper = Hyperparameters {
        c: 1e6,
        d: 1e-2,
        e: 1e6,
        f: 1e8,
        ..Default::default()
    };
    let fit = sae_fit(
        &x,
        &y,
        &part,
        &SaeConfig {
            hyper,
            seed: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let g = x.transpose() * &x;
    let mut worst: f64 = 0.0;
    for v in 0..50 {
        let lambda = fit.summary.sigma2_mean[v] / fit.summary.nu2_mean[v];
        let a = &g + DMatrix::identity(5, 5) * lambda;
        let rhs: DVector<f64> = x.transpose() * y.column(v);
        let oracle = a.lu().solve(&rhs).unwrap();
        for j in 0..5 {
            worst = worst.max((fit.summary.beta_mean[(v, j)] - oracle[j]).abs());
        }
    }
    // Monte-Carlo error of a 150-draw mean with posterior sd ≈ 0.05
    assert!(worst < 0.03, "max deviation {worst}");
}

#[test]
fn chain_mixes_on_the_experiment_configuration() {
    let part = RoiPartition::blocks(&[100; 5]).unwrap();
    let x = standard_normal_design(200, 8, 41);
    let (data, _) = simulate_sae(&x, &part, &experiment_hyperparameters(), 42).unwrap();
    let fit = sae_fit(
        &x,
        data.responses(),
        &part,
        &SaeConfig {
            hyper: experiment_hyperparameters(),
            seed: 43,
            ..Default::default()
        },
    )
    .unwrap();
    let lag = fit.summary.diagnostics.max_lag1;
    assert!(lag < 0.5, "max lag-1 autocorrelation {lag}");
}
