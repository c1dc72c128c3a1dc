//! Sampler validation on small instances.
//!
//! The joint-distribution test draws `(θ, y)` two ways: directly from the
//! prior and likelihood ("marginal-conditional"), and by alternating a Gibbs
//! sweep `θ | y` with a fresh `y | θ` ("successive-conditional"). A correct
//! sampler leaves the joint invariant, so the moments of any statistic must
//! agree up to Monte-Carlo error.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    alpha2_conditional, draw_prior, draw_responses, nu2_conditional, sigma2_conditional, sweep_with, GibbsRng,
    GibbsState, Hyperparameters, Sufficient,
};
use crate::data::RoiPartition;
use crate::error::{Error, Result};
use crate::stats::{batch_means_se, mean, variance, InverseGamma};

/// Pass threshold on |z| for every monitored comparison.
pub const Z_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub statistic: String,
    pub forward_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseGammaCheck {
    pub conditional: String,
    pub shape: f64,
    pub scale: f64,
    pub expected_mean: f64,
    pub empirical_mean: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub draws: usize,
    pub joint: Vec<MomentCheck>,
    pub inverse_gamma: Vec<InverseGammaCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub hyper: Hyperparameters,
    pub draws: usize,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparameters::default(),
            draws: 20_000,
            seed: 0,
        }
    }
}

fn monitored(state: &GibbsState, y: &DMatrix<f64>) -> Vec<f64> {
    let (u, z, yy) = (state.u[(0, 0)], state.z[(0, 0)], y[(0, 0)]);
    let (ls, ln, la) = (state.sigma2[0].ln(), state.nu2[0].ln(), state.alpha2[0].ln());
    vec![u, z, yy, ls, ln, la, u * u, z * z, yy * yy, ls * ls, ln * ln, la * la]
}

const NAMES: [&str; 12] = [
    "u[0][0]",
    "z[0][0]",
    "y[0][0]",
    "log sigma2[0]",
    "log nu2[0]",
    "log alpha2[0]",
    "u[0][0]^2",
    "z[0][0]^2",
    "y[0][0]^2",
    "(log sigma2[0])^2",
    "(log nu2[0])^2",
    "(log alpha2[0])^2",
];

/// Joint-distribution and inverse-gamma conditional checks on a small
/// instance (`V ≤ 10`, `A ≤ 2`, `T ≤ 30`).
pub fn conditional_checks(design: &DMatrix<f64>, partition: &RoiPartition, config: &CheckConfig) -> Result<CheckReport> {
    config.hyper.validate()?;
    let (t, p) = design.shape();
    let (v, a) = (partition.voxel_count(), partition.area_count());
    if v > 10 || a > 2 || t > 30 {
        return Err(Error::invalid(
            "instance",
            format!("checks expect V <= 10, A <= 2, T <= 30; got V={v}, A={a}, T={t}"),
        ));
    }
    if config.draws < 100 {
        return Err(Error::invalid("draws", "need at least 100"));
    }
    let hyper = &config.hyper;

    // marginal-conditional
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut forward: Vec<Vec<f64>> = vec![Vec::with_capacity(config.draws); NAMES.len()];
    for _ in 0..config.draws {
        let state = draw_prior(partition, p, hyper, &mut rng);
        let y = draw_responses(design, &state, partition, &mut rng);
        for (k, g) in monitored(&state, &y).into_iter().enumerate() {
            forward[k].push(g);
        }
    }

    // successive-conditional, started from an exact joint draw
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_cafe);
    let mut gibbs_rng = GibbsRng::new(config.seed.wrapping_add(1), v, a);
    let mut state = draw_prior(partition, p, hyper, &mut rng);
    let mut y = draw_responses(design, &state, partition, &mut rng);
    let mut successive: Vec<Vec<f64>> = vec![Vec::with_capacity(config.draws); NAMES.len()];
    for _ in 0..config.draws {
        let suff = Sufficient::new(design, &y)?;
        sweep_with(&mut state, &suff, partition, hyper, &mut gibbs_rng)?;
        y = draw_responses(design, &state, partition, &mut rng);
        for (k, g) in monitored(&state, &y).into_iter().enumerate() {
            successive[k].push(g);
        }
    }

    let joint: Vec<MomentCheck> = NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (f, s) = (&forward[k], &successive[k]);
            let se_f2 = variance(f) / f.len() as f64;
            let se_s = batch_means_se(s, 50);
            let z = (mean(f) - mean(s)) / (se_f2 + se_s * se_s).sqrt();
            MomentCheck {
                statistic: name.to_string(),
                forward_mean: mean(f),
                successive_mean: mean(s),
                z,
                pass: z.abs() < Z_LIMIT,
            }
        })
        .collect();

    // inverse-gamma conditionals at the final chain state
    let suff = Sufficient::new(design, &y)?;
    let beta = state.beta(partition);
    let resid = &y - design * beta.transpose();
    let rss0 = resid.column(0).norm_squared();
    debug_assert!(suff.rows == t);
    let conditionals = [
        ("sigma2[0]", sigma2_conditional(hyper, t, rss0)),
        ("alpha2[0]", alpha2_conditional(hyper, p, state.u.row(0).norm_squared())),
        ("nu2[0]", nu2_conditional(hyper, p, state.z.row(0).norm_squared())),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let inverse_gamma: Vec<InverseGammaCheck> = conditionals
        .iter()
        .map(|(name, ig)| ig_check(name, *ig, config.draws, &mut rng))
        .collect();

    let passed = joint.iter().all(|c| c.pass) && inverse_gamma.iter().all(|c| c.pass);
    Ok(CheckReport {
        draws: config.draws,
        joint,
        inverse_gamma,
        passed,
    })
}

/// Empirical mean of `draws` samples against `scale / (shape − 1)`.
pub fn ig_check(name: &str, ig: InverseGamma, draws: usize, rng: &mut ChaCha8Rng) -> InverseGammaCheck {
    let xs: Vec<f64> = (0..draws).map(|_| ig.sample(rng)).collect();
    let m = mean(&xs);
    let se = (variance(&xs) / draws as f64).sqrt();
    let expected = ig.mean();
    let z = (m - expected) / se;
    InverseGammaCheck {
        conditional: name.to_string(),
        shape: ig.shape,
        scale: ig.scale,
        expected_mean: expected,
        empirical_mean: m,
        z,
        pass: z.abs() < Z_LIMIT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_likelihood_leaves_prior() {
        let h = Hyperparameters::default();
        let ig = sigma2_conditional(&h, 0, 0.0);
        assert_eq!((ig.shape, ig.scale), (h.a, h.b));
    }

    #[test]
    fn ig_mean_identity() {
        let h = Hyperparameters { c: 3.0, d: 2.0, ..Default::default() };
        let ig = alpha2_conditional(&h, 4, 2.0);
        assert_eq!(ig.shape, 5.0);
        assert_eq!(ig.mean(), ig.scale / 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(ig_check("alpha2", ig, 20_000, &mut rng).pass);
    }

    #[test]
    fn oversized_instance_rejected() {
        let x = DMatrix::zeros(31, 2);
        let p = RoiPartition::single(3).unwrap();
        assert!(conditional_checks(&x, &p, &CheckConfig::default()).is_err());
    }
}
