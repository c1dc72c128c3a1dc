//! Synthetic data from the small-area model, the correct-versus-shuffled
//! ROI experiment, and the marginal-prior check.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::{Area, Dataset, DatasetKind, RoiPartition, VoxelGeometry};
use crate::error::{Error, Result};
use crate::evaluation::{derive_seed, normalized_rss};
use crate::ridge::{default_ridge_grid, ridge_fit_cv};
use crate::sae::{draw_prior, sae_fit, Hyperparameters, SaeConfig};
use crate::stats::{ks_p_value, ks_statistic, sign_test_two_sided, sign_test_upper, InverseGamma};

/// Parameters that generated a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub true_u: DMatrix<f64>,
    pub true_z: DMatrix<f64>,
    pub true_sigma2: DVector<f64>,
    pub true_alpha2: DVector<f64>,
    pub true_nu2: DVector<f64>,
    pub hyper: Hyperparameters,
    pub partition: RoiPartition,
    /// Voxels whose responses are pure noise (coefficients forced to 0).
    pub pure_noise: Vec<bool>,
    pub seed: u64,
}

impl SyntheticTruth {
    /// V×P coefficients actually used to generate the responses.
    pub fn true_beta(&self) -> DMatrix<f64> {
        let mut b = self.true_z.clone();
        for v in 0..b.nrows() {
            let a = self.partition.area_of(v);
            for j in 0..b.ncols() {
                b[(v, j)] = if self.pure_noise[v] { 0.0 } else { b[(v, j)] + self.true_u[(a, j)] };
            }
        }
        b
    }
}

/// `T×P` matrix of independent standard normals.
pub fn standard_normal_design(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Draw every parameter from its prior and responses
/// `y_vt = x_tᵀ(u_{A(v)} + z_v) + N(0, σ²_v)`. Voxels sit on a 10×10×…
/// unit lattice in index order.
pub fn simulate_sae(
    design: &DMatrix<f64>,
    partition: &RoiPartition,
    hyper: &Hyperparameters,
    seed: u64,
) -> Result<(Dataset, SyntheticTruth)> {
    simulate_sae_mixed(design, partition, hyper, &vec![false; partition.voxel_count()], seed)
}

/// As [`simulate_sae`], but voxels flagged in `pure_noise` get zero
/// coefficients, so their responses are noise only.
pub fn simulate_sae_mixed(
    design: &DMatrix<f64>,
    partition: &RoiPartition,
    hyper: &Hyperparameters,
    pure_noise: &[bool],
    seed: u64,
) -> Result<(Dataset, SyntheticTruth)> {
    hyper.validate()?;
    let v_count = partition.voxel_count();
    if pure_noise.len() != v_count {
        return Err(Error::Dimension(format!("{} noise flags for {v_count} voxels", pure_noise.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = draw_prior(partition, design.ncols(), hyper, &mut rng);
    let truth = SyntheticTruth {
        true_u: state.u,
        true_z: state.z,
        true_sigma2: state.sigma2,
        true_alpha2: state.alpha2,
        true_nu2: state.nu2,
        hyper: *hyper,
        partition: partition.clone(),
        pure_noise: pure_noise.to_vec(),
        seed,
    };
    let mut y = design * truth.true_beta().transpose();
    for v in 0..v_count {
        let sd = truth.true_sigma2[v].sqrt();
        for t in 0..y.nrows() {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[(t, v)] += sd * e;
        }
    }
    let dataset = Dataset::new(
        design.clone(),
        y,
        VoxelGeometry::lattice(v_count, 10, 10),
        partition.clone(),
        DatasetKind::Static,
    )?;
    Ok((dataset, truth))
}

/// Random relabelling of voxels that keeps every area's size and id.
pub fn shuffle_partition(partition: &RoiPartition, seed: u64) -> Result<RoiPartition> {
    let mut labels = partition.assignment().to_vec();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut members = vec![Vec::new(); partition.area_count()];
    for (v, &a) in labels.iter().enumerate() {
        members[a].push(v);
    }
    RoiPartition::new(
        partition
            .areas()
            .iter()
            .zip(members)
            .map(|(area, members)| Area {
                id: area.id.clone(),
                members,
            })
            .collect(),
    )
}

/// Hyperparameters of the misassignment experiment: noise variance with
/// prior mean 1, small between-area (mean 0.05) and smaller within-area
/// (mean 0.01) coefficient variance, so pooling within areas pays off.
pub fn experiment_hyperparameters() -> Hyperparameters {
    Hyperparameters {
        a: 3.0,
        b: 2.0,
        c: 3.0,
        d: 0.1,
        e: 3.0,
        f: 0.02,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub replicates: usize,
    pub seed: u64,
    pub hyper: Hyperparameters,
    pub areas: usize,
    pub area_size: usize,
    /// Rows and features of the generated design (ignored when a design is
    /// supplied).
    pub rows: usize,
    pub features: usize,
    /// Trailing fraction of rows held out for scoring.
    pub test_fraction: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replicates: 30,
            seed: 0,
            hyper: experiment_hyperparameters(),
            areas: 5,
            area_size: 100,
            rows: 200,
            features: 8,
            test_fraction: 0.2,
            burn_in: 100,
            thin: 10,
            samples: 150,
        }
    }
}

/// Mean out-of-sample nrss of each method in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub ridge: f64,
    pub sae_correct: f64,
    pub sae_shuffled: f64,
    /// Largest lag-1 autocorrelation among the correct-partition chain's
    /// monitored scalars.
    pub max_lag1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub design_supplied: bool,
    pub replicates: Vec<ReplicateResult>,
    /// Replicates where correct-partition SAE has lower nrss than ridge.
    pub correct_wins: usize,
    pub shuffled_wins: usize,
    /// One-sided sign test that correct-partition SAE beats ridge.
    pub correct_p_value: f64,
    /// Two-sided sign test for shuffled-partition SAE against ridge.
    pub shuffled_p_value: f64,
    /// Mean of `sae − ridge` over replicates.
    pub mean_diff_correct: f64,
    pub mean_diff_shuffled: f64,
}

impl ExperimentReport {
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["replicate", "seed", "ridge", "sae_correct", "sae_shuffled", "max_lag1"])
            .expect("in-memory write");
        for r in &self.replicates {
            w.write_record([
                r.replicate.to_string(),
                r.seed.to_string(),
                r.ridge.to_string(),
                r.sae_correct.to_string(),
                r.sae_shuffled.to_string(),
                r.max_lag1.to_string(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean_nrss(field: &crate::field::CoefficientField, x: &DMatrix<f64>, y: &DMatrix<f64>, mean: &DVector<f64>) -> Result<f64> {
    let vals: Vec<f64> = normalized_rss(&field.predict(x), y, mean)?.into_iter().flatten().collect();
    Ok(vals.iter().sum::<f64>() / vals.len().max(1) as f64)
}

/// Per replicate: simulate, then fit per-voxel GCV ridge, SAE with the true
/// partition and SAE with a shuffled partition on the leading rows, and score
/// all three on the held-out trailing rows.
pub fn misassignment_experiment(design: Option<&DMatrix<f64>>, config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.replicates == 0 {
        return Err(Error::invalid("replicates", "must be >= 1"));
    }
    if config.areas == 0 || config.area_size == 0 {
        return Err(Error::invalid("areas", "need at least one nonempty area"));
    }
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction", "must lie in (0, 1)"));
    }
    let generated;
    let x = match design {
        Some(d) => d,
        None => {
            generated = standard_normal_design(config.rows, config.features, derive_seed(config.seed, u64::MAX));
            &generated
        }
    };
    let t = x.nrows();
    let n_test = ((t as f64) * config.test_fraction).round() as usize;
    let n_train = t - n_test;
    if n_test < 2 || n_train <= x.ncols() {
        return Err(Error::InsufficientData(format!("{t} rows cannot support the train/test split")));
    }
    let partition = RoiPartition::blocks(&vec![config.area_size; config.areas])?;
    let (x_train, x_test) = (x.rows(0, n_train).into_owned(), x.rows(n_train, n_test).into_owned());

    let replicates: Vec<ReplicateResult> = (0..config.replicates)
        .into_par_iter()
        .map(|r| -> Result<ReplicateResult> {
            let seed = derive_seed(config.seed, r as u64);
            let (data, _) = simulate_sae(x, &partition, &config.hyper, seed)?;
            let y = data.responses();
            let (y_train, y_test) = (y.rows(0, n_train).into_owned(), y.rows(n_train, n_test).into_owned());
            let mean = DVector::from_iterator(y.ncols(), y_train.column_iter().map(|c| c.mean()));

            let (ridge, _) = ridge_fit_cv(&x_train, &y_train, &default_ridge_grid(&x_train))?;
            let chain = SaeConfig {
                hyper: config.hyper,
                burn_in: config.burn_in,
                thin: config.thin,
                samples: config.samples,
                seed: derive_seed(seed, 2),
            };
            let correct = sae_fit(&x_train, &y_train, &partition, &chain)?;
            let shuffled_partition = shuffle_partition(&partition, derive_seed(seed, 1))?;
            let shuffled = sae_fit(&x_train, &y_train, &shuffled_partition, &chain)?;
            Ok(ReplicateResult {
                replicate: r,
                seed,
                ridge: mean_nrss(&ridge, &x_test, &y_test, &mean)?,
                sae_correct: mean_nrss(&correct.field, &x_test, &y_test, &mean)?,
                sae_shuffled: mean_nrss(&shuffled.field, &x_test, &y_test, &mean)?,
                max_lag1: correct.summary.diagnostics.max_lag1,
            })
        })
        .collect::<Result<_>>()?;

    let n = replicates.len();
    let correct_wins = replicates.iter().filter(|r| r.sae_correct < r.ridge).count();
    let shuffled_wins = replicates.iter().filter(|r| r.sae_shuffled < r.ridge).count();
    let mean_diff = |f: &dyn Fn(&ReplicateResult) -> f64| replicates.iter().map(f).sum::<f64>() / n as f64;
    Ok(ExperimentReport {
        config: *config,
        design_supplied: design.is_some(),
        correct_wins,
        shuffled_wins,
        correct_p_value: sign_test_upper(correct_wins, n),
        shuffled_p_value: sign_test_two_sided(shuffled_wins, n),
        mean_diff_correct: mean_diff(&|r| r.sae_correct - r.ridge),
        mean_diff_shuffled: mean_diff(&|r| r.sae_shuffled - r.ridge),
        replicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCheckReport {
    pub e: f64,
    pub f: f64,
    pub draws: usize,
    /// `2e`.
    pub degrees_of_freedom: f64,
    /// Draws of z are divided by this (`sqrt(f/e)`) before comparison.
    pub scale: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub pass: bool,
    /// KS distance of the same scaled draws to a standard normal.
    pub normal_ks_statistic: f64,
}

/// Draw `ν² ~ IG(e, f)` then `z ~ N(0, ν²)`, and compare `z / sqrt(f/e)` to
/// Student's t with `2e` degrees of freedom.
pub fn marginal_prior_check(e: f64, f: f64, draws: usize, seed: u64) -> Result<PriorCheckReport> {
    if !(e > 1.0) || !e.is_finite() {
        return Err(Error::invalid("e", format!("must be finite and > 1, got {e}")));
    }
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::invalid("f", format!("must be finite and > 0, got {f}")));
    }
    if draws < 1000 {
        return Err(Error::invalid("draws", "need at least 1000"));
    }
    let ig = InverseGamma::new(e, f);
    let scale = (f / e).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scaled: Vec<f64> = (0..draws)
        .map(|_| {
            let nu2 = ig.sample(&mut rng);
            let eps: f64 = StandardNormal.sample(&mut rng);
            eps * nu2.sqrt() / scale
        })
        .collect();
    let df = 2.0 * e;
    let t = StudentsT::new(0.0, 1.0, df).expect("valid t");
    let d = ks_statistic(&scaled, |x| t.cdf(x));
    let p = ks_p_value(d, draws);
    let normal = Normal::standard();
    Ok(PriorCheckReport {
        e,
        f,
        draws,
        degrees_of_freedom: df,
        scale,
        ks_statistic: d,
        p_value: p,
        pass: p >= 0.05,
        normal_ks_statistic: ks_statistic(&scaled, |x| normal.cdf(x)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_keeps_sizes_and_ids() {
        let p = RoiPartition::blocks(&[3, 5, 2]).unwrap();
        let s = shuffle_partition(&p, 7).unwrap();
        let sizes: Vec<usize> = s.areas().iter().map(|a| a.members.len()).collect();
        assert_eq!(sizes, vec![3, 5, 2]);
        assert_eq!(s.areas()[1].id, p.areas()[1].id);
        let single = RoiPartition::single(6).unwrap();
        assert_eq!(shuffle_partition(&single, 3).unwrap(), single);
    }

    #[test]
    fn noise_voxels_have_zero_truth() {
        let x = standard_normal_design(20, 3, 1);
        let p = RoiPartition::blocks(&[2, 2]).unwrap();
        let (_, truth) = simulate_sae_mixed(&x, &p, &Hyperparameters::default(), &[true, false, true, false], 4).unwrap();
        let b = truth.true_beta();
        assert!(b.row(0).iter().all(|x| *x == 0.0));
        assert!(b.row(1).iter().any(|x| *x != 0.0));
    }

    #[test]
    fn prior_check_reports_df() {
        let r = marginal_prior_check(3.0, 2.0, 2000, 0).unwrap();
        assert_eq!(r.degrees_of_freedom, 6.0);
        assert!(marginal_prior_check(1.0, 2.0, 2000, 0).is_err());
        assert!(marginal_prior_check(3.0, 2.0, 10, 0).is_err());
    }
}
