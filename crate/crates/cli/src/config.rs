//! Run configuration: one JSON document, then command-line overrides.
//!
//! Relative paths inside a config file resolve against the file's directory;
//! paths given as flags resolve against the working directory. Component
//! seeds are never read from the file: they are derived from the master
//! seed (see [`Seeds`]).

use std::fs;
use std::path::{Path, PathBuf};

use brainreg::elastic_net::{EnCvOptions, EnGrids};
use brainreg::evaluation::{derive_seed, MethodSpec, SmoothingTuning};
use brainreg::sae::{Hyperparameters, SaeConfig};
use brainreg::simulation::{experiment_hyperparameters, ExperimentConfig};
use brainreg::smoothing::SmoothingSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const OUTPUT_ENV: &str = "BRAINREG_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "brainreg-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodName {
    Ols,
    #[default]
    Ridge,
    ElasticNet,
    Sae,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeParams {
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticNetParams {
    pub grids: Option<EnGrids>,
    pub folds: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        let d = EnCvOptions::default();
        Self {
            grids: None,
            folds: d.folds,
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeParams {
    pub hyper: Hyperparameters,
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
}

impl Default for SaeParams {
    fn default() -> Self {
        let d = SaeConfig::default();
        Self {
            hyper: d.hyper,
            burn_in: d.burn_in,
            thin: d.thin,
            samples: d.samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub replicates: usize,
    pub hyper: Hyperparameters,
    pub areas: usize,
    pub area_size: usize,
    pub rows: usize,
    pub features: usize,
    pub test_fraction: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
    /// Also run the marginal prior check with `(hyper.e, hyper.f)`.
    pub prior_check: bool,
    pub prior_draws: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            replicates: d.replicates,
            hyper: d.hyper,
            areas: d.areas,
            area_size: d.area_size,
            rows: d.rows,
            features: d.features,
            test_fraction: d.test_fraction,
            burn_in: d.burn_in,
            thin: d.thin,
            samples: d.samples,
            prior_check: true,
            prior_draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckParams {
    pub hyper: Hyperparameters,
    pub draws: usize,
    /// Synthetic instance for the conditional checks.
    pub rows: usize,
    pub features: usize,
    pub area_sizes: Vec<usize>,
    /// Marginal prior check; `e = 3` gives t with 6 degrees of freedom.
    pub prior_e: f64,
    pub prior_f: f64,
    pub prior_draws: usize,
}

impl Default for CheckParams {
    fn default() -> Self {
        let prior = experiment_hyperparameters();
        Self {
            hyper: Hyperparameters::default(),
            draws: 20_000,
            rows: 10,
            features: 2,
            area_sizes: vec![2, 2],
            prior_e: prior.e,
            prior_f: prior.f,
            prior_draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub method: MethodName,
    pub ridge: RidgeParams,
    pub elastic_net: ElasticNetParams,
    pub sae: SaeParams,
    /// Fixed smoother (`smooth`, and `evaluate` when no tuning is given).
    pub smoothing: Option<SmoothingSpec>,
    /// Per-fold smoothing selection for `evaluate`.
    pub smoothing_tuning: Option<SmoothingTuning>,
    pub folds: usize,
    pub trim: Option<usize>,
    pub rank_folds: usize,
    pub output: Option<PathBuf>,
    pub simulate: SimulateParams,
    pub check: CheckParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            dataset: None,
            method: MethodName::default(),
            ridge: RidgeParams::default(),
            elastic_net: ElasticNetParams::default(),
            sae: SaeParams::default(),
            smoothing: None,
            smoothing_tuning: None,
            folds: 10,
            trim: None,
            rank_folds: 10,
            output: None,
            simulate: SimulateParams::default(),
            check: CheckParams::default(),
        }
    }
}

/// Per-component seeds, all derived from the master seed with
/// `derive_seed(master, k)`:
///
/// | k | component                       |
/// |---|---------------------------------|
/// | 1 | outer fold plan                 |
/// | 2 | zero-shot pairs and ranking     |
/// | 3 | estimator (EN folds, SAE chain) |
/// | 4 | simulation experiment           |
/// | 5 | marginal prior check            |
/// | 6 | conditional checks              |
/// | 7 | synthetic design for checks     |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub folds: u64,
    pub pipeline: u64,
    pub method: u64,
    pub experiment: u64,
    pub prior_check: u64,
    pub checks: u64,
    pub check_design: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            folds: derive_seed(master, 1),
            pipeline: derive_seed(master, 2),
            method: derive_seed(master, 3),
            experiment: derive_seed(master, 4),
            prior_check: derive_seed(master, 5),
            checks: derive_seed(master, 6),
            check_design: derive_seed(master, 7),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation("config", format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation("config", format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.dataset, &mut config.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::validation("missing_seed", "a seed is required: set `seed` in the config or pass --seed"))
    }

    pub fn dataset_path(&self) -> CliResult<&Path> {
        let path = self
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::validation("missing_dataset", "no dataset: set `dataset` in the config or pass --dataset"))?;
        if !path.exists() {
            return Err(CliError::validation(
                "missing_dataset",
                format!("dataset path {} does not exist", path.display()),
            ));
        }
        Ok(path)
    }

    /// Flag beats environment beats config.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }

    pub fn method_spec(&self, seeds: &Seeds) -> MethodSpec {
        match self.method {
            MethodName::Ols => MethodSpec::Ols,
            MethodName::Ridge => MethodSpec::Ridge {
                grid: self.ridge.grid.clone(),
            },
            MethodName::ElasticNet => MethodSpec::ElasticNet {
                grids: self.elastic_net.grids.clone(),
                options: EnCvOptions {
                    folds: self.elastic_net.folds,
                    seed: seeds.method,
                    tol: self.elastic_net.tol,
                    max_iter: self.elastic_net.max_iter,
                },
            },
            MethodName::Sae => MethodSpec::Sae {
                config: self.sae_config(seeds),
            },
        }
    }

    pub fn sae_config(&self, seeds: &Seeds) -> SaeConfig {
        SaeConfig {
            hyper: self.sae.hyper,
            burn_in: self.sae.burn_in,
            thin: self.sae.thin,
            samples: self.sae.samples,
            seed: seeds.method,
        }
    }

    pub fn experiment_config(&self, seeds: &Seeds) -> ExperimentConfig {
        let s = &self.simulate;
        ExperimentConfig {
            replicates: s.replicates,
            seed: seeds.experiment,
            hyper: s.hyper,
            areas: s.areas,
            area_size: s.area_size,
            rows: s.rows,
            features: s.features,
            test_fraction: s.test_fraction,
            burn_in: s.burn_in,
            thin: s.thin,
            samples: s.samples,
        }
    }

    /// The smoothing selection `evaluate` uses: explicit tuning first, then
    /// a fixed smoother.
    pub fn evaluation_smoothing(&self) -> Option<SmoothingTuning> {
        self.smoothing_tuning.clone().or_else(|| {
            self.smoothing.clone().map(|spec| SmoothingTuning::Fixed { spec })
        })
    }

    /// Canonical JSON of the effective configuration, without the output
    /// directory (outputs must not depend on where they are written).
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        serde_json::to_string(&c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "fold": 3}"#).unwrap_err();
        assert!(err.to_string().contains("fold"));
        assert!(serde_json::from_str::<RunConfig>(r#"{"sae": {"seed": 3}}"#).is_err());
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 5, "method": "elastic_net"}"#).unwrap();
        assert_eq!(c.folds, 10);
        assert_eq!(c.method, MethodName::ElasticNet);
        let seeds = Seeds::new(5);
        match c.method_spec(&seeds) {
            MethodSpec::ElasticNet { options, .. } => assert_eq!(options.seed, seeds.method),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn smoothing_spec_round_trips_through_the_config() {
        let text = r#"{"seed": 1, "smoothing": {"kind": "roi", "gamma": 0.5, "weights": {"type": "gaussian", "bandwidth": 2.0}}}"#;
        let c: RunConfig = serde_json::from_str(text).unwrap();
        let back: RunConfig = serde_json::from_str(&c.canonical_json()).unwrap();
        assert_eq!(back.smoothing, c.smoothing);
        assert!(matches!(c.evaluation_smoothing(), Some(SmoothingTuning::Fixed { .. })));
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::default().seed().is_err());
    }

    #[test]
    fn component_seeds_differ() {
        let s = Seeds::new(0);
        let all = [s.folds, s.pipeline, s.method, s.experiment, s.prior_check, s.checks, s.check_design];
        for i in 0..all.len() {
            for j in 0..i {
                assert_ne!(all[i], all[j]);
            }
        }
    }
}
