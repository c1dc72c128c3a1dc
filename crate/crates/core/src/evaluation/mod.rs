//! Out-of-sample scoring and the nested cross-validation harness.
//!
//! Each outer fold fits on its training rows (with any per-voxel tuning done
//! inside the estimator), optionally tunes smoothing on an inner split of the
//! training rows, derives brain-level voxel weights from a K-fold pass over
//! the training rows, and only then touches the test rows.

mod folds;
mod zero_shot;

pub use folds::{derive_seed, make_fold_plan, split_rows, Fold, FoldPlan, DEFAULT_DYNAMIC_TRIM};
pub use zero_shot::{
    brain_pair_credits, normalized_rss, rank_weights, rss_tss, stimulus_pairs, voxel_accuracies, voxel_pair_credits,
    zero_shot_brain, zero_shot_voxel, Decision, MAX_EXHAUSTIVE_PAIRS,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{select_rows, BallNorm, Dataset, RoiPartition};
use crate::elastic_net::{elastic_net_cv_field, EnCvOptions, EnGrids};
use crate::error::{Error, Result};
use crate::field::{CoefficientField, MethodTag, RegularizationMap, VoxelRegularization};
use crate::ridge::{default_ridge_grid, ols_fit, ridge_fit_cv};
use crate::sae::{sae_fit, SaeConfig};
use crate::smoothing::{
    default_bandwidth_grid, default_gamma_grid, default_radius_grid, select_radius, select_roi, smooth_field,
    RoiWeights, SmoothingSpec,
};
use crate::stats::median;

/// An estimator together with its tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    Ols,
    Ridge {
        /// `None` uses the default grid of the training design.
        #[serde(default)]
        grid: Option<Vec<f64>>,
    },
    ElasticNet {
        #[serde(default)]
        grids: Option<EnGrids>,
        #[serde(default)]
        options: EnCvOptions,
    },
    Sae {
        #[serde(default)]
        config: SaeConfig,
    },
}

impl MethodSpec {
    pub fn tag(&self) -> MethodTag {
        match self {
            MethodSpec::Ols => MethodTag::Ols,
            MethodSpec::Ridge { .. } => MethodTag::Ridge,
            MethodSpec::ElasticNet { .. } => MethodTag::ElasticNet,
            MethodSpec::Sae { .. } => MethodTag::Sae,
        }
    }

    pub fn fit(
        &self,
        design: &DMatrix<f64>,
        responses: &DMatrix<f64>,
        partition: &RoiPartition,
    ) -> Result<(CoefficientField, RegularizationMap)> {
        match self {
            MethodSpec::Ols => Ok((ols_fit(design, responses)?, RegularizationMap::empty(responses.ncols()))),
            MethodSpec::Ridge { grid } => {
                let owned;
                let grid = match grid {
                    Some(g) => g,
                    None => {
                        owned = default_ridge_grid(design);
                        &owned
                    }
                };
                ridge_fit_cv(design, responses, grid)
            }
            MethodSpec::ElasticNet { grids, options } => {
                let (field, map, _) = elastic_net_cv_field(design, responses, grids.as_ref(), options)?;
                Ok((field, map))
            }
            MethodSpec::Sae { config } => {
                let fit = sae_fit(design, responses, partition, config)?;
                Ok((fit.field, fit.regularization))
            }
        }
    }
}

/// How smoothing parameters are chosen inside each outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothingTuning {
    /// Per-voxel radius chosen on the inner split.
    Ball {
        norm: BallNorm,
        #[serde(default)]
        radius_grid: Option<Vec<f64>>,
    },
    /// Global `γ` and affinity chosen on the inner split. Candidates are
    /// uniform affinities plus a Gaussian for each bandwidth.
    Roi {
        #[serde(default)]
        gamma_grid: Option<Vec<f64>>,
        #[serde(default)]
        bandwidth_grid: Option<Vec<f64>>,
    },
    /// No tuning: apply this smoother.
    Fixed { spec: SmoothingSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    /// Folds of the training-set pass that ranks voxels for brain weights.
    pub rank_folds: usize,
    /// Seed for pair sampling and the ranking pass.
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { rank_folds: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub pairs: usize,
    pub pairs_sampled: bool,
    /// Two decisions per pair.
    pub decisions: usize,
    /// Summed credit (ties count one half).
    pub credit: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<SmoothingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: MethodTag,
    /// Pooled over folds: `Σ RSS / Σ TSS`; `None` for constant voxels.
    pub per_voxel_nrss: Vec<Option<f64>>,
    /// Pooled single-voxel zero-shot accuracy.
    pub per_voxel_accuracy: Vec<f64>,
    pub folds: Vec<FoldResult>,
    /// `Σ credit / Σ decisions` over folds.
    pub whole_brain_accuracy: f64,
    /// Per-voxel medians of each fold's chosen regularization.
    pub regularization: RegularizationMap,
    pub plan: FoldPlan,
}

impl EvaluationReport {
    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    /// Mean of the per-voxel nrss values that are defined.
    pub fn mean_nrss(&self) -> f64 {
        let vals: Vec<f64> = self.per_voxel_nrss.iter().flatten().copied().collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `voxel,x,y,z,nrss,accuracy,regularization` with grid coordinates;
    /// undefined cells are empty.
    pub fn map_csv(&self, dataset: &Dataset) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["voxel", "x", "y", "z", "nrss", "accuracy", "regularization"])
            .expect("in-memory write");
        let intensity = self.regularization.intensities();
        for v in 0..self.per_voxel_accuracy.len() {
            let c = dataset.geometry().coords()[v];
            w.write_record([
                v.to_string(),
                c[0].to_string(),
                c[1].to_string(),
                c[2].to_string(),
                self.per_voxel_nrss[v].map(|x| x.to_string()).unwrap_or_default(),
                self.per_voxel_accuracy[v].to_string(),
                intensity.get(v).copied().flatten().map(|x| x.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Fit stage of one fold: only the training rows are read.
pub fn fit_fold(dataset: &Dataset, method: &MethodSpec, fold: &Fold) -> Result<(CoefficientField, RegularizationMap)> {
    method.fit(
        &select_rows(dataset.design(), &fold.train),
        &select_rows(dataset.responses(), &fold.train),
        dataset.rois(),
    )
}

fn tune_smoothing(
    dataset: &Dataset,
    method: &MethodSpec,
    tuning: &SmoothingTuning,
    fold: &Fold,
    seed: u64,
) -> Result<SmoothingSpec> {
    let fit = |x: &DMatrix<f64>, y: &DMatrix<f64>| method.fit(x, y, dataset.rois()).map(|(f, _)| f);
    match tuning {
        SmoothingTuning::Fixed { spec } => Ok(spec.clone()),
        SmoothingTuning::Ball { norm, radius_grid } => {
            let grid = radius_grid.clone().unwrap_or_else(|| default_radius_grid(dataset.geometry()));
            let sel = select_radius(dataset, fit, *norm, &grid, &fold.inner_train, &fold.validation, seed)?;
            Ok(SmoothingSpec::Ball {
                norm: *norm,
                radii: sel.radii,
            })
        }
        SmoothingTuning::Roi {
            gamma_grid,
            bandwidth_grid,
        } => {
            let gammas = gamma_grid.clone().unwrap_or_else(default_gamma_grid);
            let bandwidths = bandwidth_grid
                .clone()
                .unwrap_or_else(|| default_bandwidth_grid(dataset.geometry()));
            let mut candidates = vec![RoiWeights::Uniform];
            candidates.extend(bandwidths.into_iter().map(|bandwidth| RoiWeights::Gaussian { bandwidth }));
            let sel = select_roi(dataset, fit, &gammas, &candidates, &fold.inner_train, &fold.validation, seed)?;
            Ok(SmoothingSpec::Roi {
                gamma: sel.gamma,
                weights: sel.weights,
            })
        }
    }
}

/// Per-voxel accuracies from a K-fold pass over `rows`, used to rank voxels.
fn training_accuracies(
    dataset: &Dataset,
    method: &MethodSpec,
    smoothing: Option<&SmoothingSpec>,
    rows: &[usize],
    contiguous: bool,
    trim: usize,
    options: &PipelineOptions,
    fold_index: usize,
) -> Result<Vec<f64>> {
    let seed = derive_seed(options.seed, 1000 + fold_index as u64);
    let splits = split_rows(rows, options.rank_folds, contiguous, trim, seed)?;
    let v_count = dataset.voxels();
    let mut credit = vec![0.0; v_count];
    let mut decisions = 0usize;
    for (k, (train, test)) in splits.iter().enumerate() {
        let (mut field, _) = method.fit(
            &select_rows(dataset.design(), train),
            &select_rows(dataset.responses(), train),
            dataset.rois(),
        )?;
        if let Some(spec) = smoothing {
            field = smooth_field(&field, spec, dataset.geometry(), dataset.rois())?;
        }
        let pred = field.predict(&select_rows(dataset.design(), test));
        let (pairs, _) = stimulus_pairs(test.len(), derive_seed(seed, k as u64));
        for (c, add) in credit
            .iter_mut()
            .zip(voxel_pair_credits(&pred, &select_rows(dataset.responses(), test), &pairs))
        {
            *c += add;
        }
        decisions += 2 * pairs.len();
    }
    Ok(credit
        .into_iter()
        .map(|c| if decisions > 0 { c / decisions as f64 } else { 0.5 })
        .collect())
}

fn median_map(maps: &[RegularizationMap], voxels: usize) -> RegularizationMap {
    let mut out = RegularizationMap::empty(voxels);
    let pick = |f: &dyn Fn(&VoxelRegularization) -> Option<f64>, v: usize| {
        let vals: Vec<f64> = maps.iter().filter_map(|m| m.per_voxel.get(v).and_then(f)).collect();
        (!vals.is_empty()).then(|| median(&vals))
    };
    for v in 0..voxels {
        out.per_voxel[v] = VoxelRegularization {
            ridge_lambda: pick(&|r| r.ridge_lambda, v),
            en_lambda1: pick(&|r| r.en_lambda1, v),
            en_lambda2: pick(&|r| r.en_lambda2, v),
            smoothing_radius: pick(&|r| r.smoothing_radius, v),
            posterior_nu2: pick(&|r| r.posterior_nu2, v),
        };
    }
    for m in maps {
        out.notes.extend(m.notes.clone());
    }
    out.notes
        .insert("aggregation".into(), "per-voxel median across outer folds".into());
    out
}

/// Nested cross-validation of one method over `plan`.
pub fn run_pipeline(
    dataset: &Dataset,
    method: &MethodSpec,
    smoothing: Option<&SmoothingTuning>,
    plan: &FoldPlan,
    options: &PipelineOptions,
) -> Result<EvaluationReport> {
    if plan.folds.is_empty() {
        return Err(Error::InvalidFolds("fold plan is empty".into()));
    }
    if let Some(bad) = plan.folds.iter().flat_map(|f| f.train.iter().chain(&f.test)).find(|&&r| r >= dataset.rows()) {
        return Err(Error::InvalidFolds(format!("row {bad} outside the dataset")));
    }
    let v_count = dataset.voxels();
    let mut rss = vec![0.0; v_count];
    let mut tss = vec![0.0; v_count];
    let mut voxel_credit = vec![0.0; v_count];
    let mut voxel_decisions = 0usize;
    let mut results = Vec::with_capacity(plan.folds.len());
    let mut maps = Vec::with_capacity(plan.folds.len());

    for (k, fold) in plan.folds.iter().enumerate() {
        let fold_seed = derive_seed(options.seed, k as u64);
        let (mut field, mut map) = fit_fold(dataset, method, fold)?;
        let spec = smoothing
            .map(|t| tune_smoothing(dataset, method, t, fold, fold_seed))
            .transpose()?;
        if let Some(spec) = &spec {
            field = smooth_field(&field, spec, dataset.geometry(), dataset.rois())?;
            match spec {
                SmoothingSpec::Ball { radii, .. } => {
                    for (r, &rad) in map.per_voxel.iter_mut().zip(radii) {
                        r.smoothing_radius = Some(rad);
                    }
                }
                SmoothingSpec::Roi { gamma, weights } => {
                    map.notes
                        .insert(format!("roi_smoothing_fold_{k}"), format!("gamma={gamma} weights={weights:?}"));
                }
            }
        }
        let accuracies = training_accuracies(
            dataset,
            method,
            spec.as_ref(),
            &fold.train,
            plan.contiguous,
            plan.trim,
            options,
            k,
        )?;
        let weights = rank_weights(&accuracies);

        let y_train = select_rows(dataset.responses(), &fold.train);
        let train_mean = DVector::from_iterator(v_count, y_train.column_iter().map(|c| c.mean()));
        let x_test = select_rows(dataset.design(), &fold.test);
        let y_test = select_rows(dataset.responses(), &fold.test);
        let pred = field.predict(&x_test);
        let (r, t) = rss_tss(&pred, &y_test, &train_mean)?;
        for v in 0..v_count {
            rss[v] += r[v];
            tss[v] += t[v];
        }
        let (pairs, sampled) = stimulus_pairs(fold.test.len(), fold_seed);
        for (c, add) in voxel_credit.iter_mut().zip(voxel_pair_credits(&pred, &y_test, &pairs)) {
            *c += add;
        }
        voxel_decisions += 2 * pairs.len();
        let (credit, decisions) = brain_pair_credits(&pred, &y_test, &weights, &pairs);
        results.push(FoldResult {
            fold: k,
            train_rows: fold.train.len(),
            test_rows: fold.test.len(),
            pairs: pairs.len(),
            pairs_sampled: sampled,
            decisions,
            credit,
            accuracy: if decisions > 0 { credit / decisions as f64 } else { 0.5 },
            smoothing: spec,
        });
        maps.push(map);
    }

    let total_credit: f64 = results.iter().map(|f| f.credit).sum();
    let total_decisions: usize = results.iter().map(|f| f.decisions).sum();
    Ok(EvaluationReport {
        method: method.tag(),
        per_voxel_nrss: rss.iter().zip(&tss).map(|(r, t)| (*t > 0.0).then(|| r / t)).collect(),
        per_voxel_accuracy: voxel_credit
            .iter()
            .map(|c| if voxel_decisions > 0 { c / voxel_decisions as f64 } else { 0.5 })
            .collect(),
        folds: results,
        whole_brain_accuracy: if total_decisions > 0 {
            total_credit / total_decisions as f64
        } else {
            0.5
        },
        regularization: median_map(&maps, v_count),
        plan: plan.clone(),
    })
}
