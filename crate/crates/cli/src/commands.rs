use std::fs;
use std::path::{Path, PathBuf};

use brainreg::data::io::{load_dataset, Manifest, MANIFEST_FILE};
use brainreg::data::{BallNorm, Dataset, RoiPartition};
use brainreg::evaluation::{make_fold_plan, run_pipeline, MethodSpec, PipelineOptions};
use brainreg::sae::checks::{conditional_checks, CheckConfig};
use brainreg::sae::sae_fit;
use brainreg::simulation::{marginal_prior_check, misassignment_experiment, standard_normal_design};
use brainreg::smoothing::{smooth_field, RoiWeights, SmoothingSpec};
use brainreg::{CoefficientField, RegularizationMap};
use serde_json::json;

use crate::config::{RunConfig, Seeds};
use crate::error::{CliError, CliResult};
use crate::output::{sha256_hex, Outputs, RunInfo};

/// What a finished command reports back to `main`.
pub struct Completed {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

/// Smoother requested on the command line; overrides `smoothing`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmoothFlags {
    pub radius: Option<f64>,
    pub norm: Option<BallNorm>,
    pub gamma: Option<f64>,
    pub bandwidth: Option<f64>,
}

struct Loaded {
    dataset: Dataset,
    sha256: String,
}

fn load(config: &RunConfig) -> CliResult<Loaded> {
    let path = config.dataset_path()?;
    let dataset = load_dataset(path)?;
    Ok(Loaded {
        dataset,
        sha256: dataset_hash(path)?,
    })
}

/// Hash of the manifest followed by each file it references.
fn dataset_hash(path: &Path) -> CliResult<String> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let read = |p: &Path| fs::read(p).map_err(|e| CliError::runtime("io", format!("i/o error on {}: {e}", p.display())));
    let text = read(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|e| CliError::validation("format", format!("manifest: {e}")))?;
    let mut all = text;
    for p in [&manifest.design, &manifest.responses, &manifest.coordinates, &manifest.rois] {
        all.extend(read(&root.join(p))?);
    }
    Ok(sha256_hex(&all))
}

fn finish(
    command: &str,
    config: &RunConfig,
    seeds: Seeds,
    dataset_sha256: Option<String>,
    outputs: Outputs,
    out_dir: &Path,
    summary: String,
) -> CliResult<Completed> {
    let canonical = config.canonical_json();
    let info = RunInfo {
        tool: "brainreg",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: seeds.master,
        seeds,
        config_sha256: sha256_hex(canonical.as_bytes()),
        config: serde_json::from_str(&canonical).expect("canonical config is json"),
        dataset_sha256,
    };
    let files = outputs.commit(out_dir, &info)?;
    Ok(Completed { summary, files })
}

fn add_field(outputs: &mut Outputs, field: &CoefficientField, prefix: &str) {
    outputs.add(&format!("{prefix}coefficients.csv"), field.coefficients_csv());
    outputs.add(&format!("{prefix}std_errors.csv"), field.std_errors_csv());
    outputs.add_json(
        &format!("{prefix}field.json"),
        &json!({
            "method": field.method,
            "voxels": field.voxels(),
            "features": field.coefficients.ncols(),
            "intercepts": field.intercepts.as_slice(),
            "noise_variance": field.noise_variance.as_slice(),
            "std_errors_approximate": field.std_errors_approximate,
            "smoothed": field.smoothed,
        }),
    );
}

/// Fit the configured method on every row. SAE fits also emit chain
/// diagnostics and the final state.
fn fit_all(dataset: &Dataset, config: &RunConfig, seeds: &Seeds, outputs: &mut Outputs) -> CliResult<(CoefficientField, RegularizationMap)> {
    match config.method_spec(seeds) {
        MethodSpec::Sae { config: sae } => {
            let fit = sae_fit(dataset.design(), dataset.responses(), dataset.rois(), &sae)?;
            outputs.add("diagnostics.csv", fit.summary.diagnostics.to_csv());
            outputs.add("checkpoint.bin", fit.summary.final_state.to_checkpoint());
            outputs.add_json(
                "posterior.json",
                &json!({
                    "samples": fit.summary.sample_count,
                    "max_lag1": fit.summary.diagnostics.max_lag1,
                    "sigma2_mean": fit.summary.sigma2_mean.as_slice(),
                    "nu2_mean": fit.summary.nu2_mean.as_slice(),
                }),
            );
            Ok((fit.field, fit.regularization))
        }
        spec => Ok(spec.fit(dataset.design(), dataset.responses(), dataset.rois())?),
    }
}

pub fn fit(config: &RunConfig, out_dir: &Path) -> CliResult<Completed> {
    let seeds = Seeds::new(config.seed()?);
    let loaded = load(config)?;
    let data = &loaded.dataset;
    let mut outputs = Outputs::default();
    let (field, map) = fit_all(data, config, &seeds, &mut outputs)?;
    add_field(&mut outputs, &field, "");
    outputs.add("regularization.csv", map.to_csv());
    let summary = format!(
        "fit {} on {} voxels x {} features ({} rows)",
        field.method.name(),
        data.voxels(),
        data.features(),
        data.rows()
    );
    finish("fit", config, seeds, Some(loaded.sha256), outputs, out_dir, summary)
}

pub fn evaluate(config: &RunConfig, out_dir: &Path) -> CliResult<Completed> {
    let seeds = Seeds::new(config.seed()?);
    let loaded = load(config)?;
    let data = &loaded.dataset;
    let plan = make_fold_plan(data, config.folds, config.trim, seeds.folds)?;
    let tuning = config.evaluation_smoothing();
    let options = PipelineOptions {
        rank_folds: config.rank_folds,
        seed: seeds.pipeline,
    };
    let report = run_pipeline(data, &config.method_spec(&seeds), tuning.as_ref(), &plan, &options)?;
    let mut outputs = Outputs::default();
    outputs.add("report.json", format!("{}\n", report.to_json()));
    outputs.add("map.csv", report.map_csv(data));
    outputs.add("regularization.csv", report.regularization.to_csv());
    let summary = format!(
        "evaluate {}: whole-brain accuracy {:.4}, mean nrss {:.4} over {} folds",
        report.method.name(),
        report.whole_brain_accuracy,
        report.mean_nrss(),
        report.folds.len()
    );
    finish("evaluate", config, seeds, Some(loaded.sha256), outputs, out_dir, summary)
}

fn smoothing_spec(config: &RunConfig, flags: &SmoothFlags, voxels: usize) -> CliResult<SmoothingSpec> {
    match (flags.radius, flags.gamma) {
        (Some(_), Some(_)) => Err(CliError::validation("smoothing", "--radius and --gamma are mutually exclusive")),
        (Some(r), None) => Ok(SmoothingSpec::ball_uniform(flags.norm.unwrap_or(BallNorm::L2), r, voxels)),
        (None, Some(gamma)) => Ok(SmoothingSpec::Roi {
            gamma,
            weights: match flags.bandwidth {
                Some(bandwidth) => RoiWeights::Gaussian { bandwidth },
                None => RoiWeights::Uniform,
            },
        }),
        (None, None) => config.smoothing.clone().ok_or_else(|| {
            CliError::validation("smoothing", "no smoother: set `smoothing` in the config or pass --radius / --gamma")
        }),
    }
}

pub fn smooth(config: &RunConfig, flags: &SmoothFlags, out_dir: &Path) -> CliResult<Completed> {
    let seeds = Seeds::new(config.seed()?);
    let loaded = load(config)?;
    let data = &loaded.dataset;
    let spec = smoothing_spec(config, flags, data.voxels())?;
    spec.validate(data.voxels())?;
    // the manifest should describe the smoother that actually ran
    let mut effective = config.clone();
    effective.smoothing = Some(spec.clone());

    let mut outputs = Outputs::default();
    let (raw, map) = fit_all(data, config, &seeds, &mut outputs)?;
    let smoothed = smooth_field(&raw, &spec, data.geometry(), data.rois())?;
    add_field(&mut outputs, &smoothed, "");
    add_field(&mut outputs, &raw, "unsmoothed_");
    outputs.add("regularization.csv", map.to_csv());
    outputs.add_json("smoothing.json", &spec);
    let kind = match spec {
        SmoothingSpec::Ball { .. } => "ball",
        SmoothingSpec::Roi { .. } => "roi",
    };
    let summary = format!("smooth {} field of {} voxels with the {kind} smoother", raw.method.name(), data.voxels());
    finish("smooth", &effective, seeds, Some(loaded.sha256), outputs, out_dir, summary)
}

pub fn simulate(config: &RunConfig, out_dir: &Path) -> CliResult<Completed> {
    let seeds = Seeds::new(config.seed()?);
    let loaded = match config.dataset {
        Some(_) => Some(load(config)?),
        None => None,
    };
    let experiment = config.experiment_config(&seeds);
    let report = misassignment_experiment(loaded.as_ref().map(|l| l.dataset.design()), &experiment)?;
    let mut outputs = Outputs::default();
    outputs.add("experiment.json", format!("{}\n", report.to_json()));
    outputs.add("experiment.csv", report.to_csv());
    let mut summary = format!(
        "simulate: SAE beat ridge in {}/{} replicates (p = {:.3e}); shuffled partition {}/{} (p = {:.3e})",
        report.correct_wins,
        report.replicates.len(),
        report.correct_p_value,
        report.shuffled_wins,
        report.replicates.len(),
        report.shuffled_p_value
    );
    if config.simulate.prior_check {
        let hyper = config.simulate.hyper;
        let prior = marginal_prior_check(hyper.e, hyper.f, config.simulate.prior_draws, seeds.prior_check)?;
        summary.push_str(&format!(
            "; prior check vs t with {} df: p = {:.3}",
            prior.degrees_of_freedom, prior.p_value
        ));
        outputs.add_json("prior_check.json", &prior);
    }
    finish("simulate", config, seeds, loaded.map(|l| l.sha256), outputs, out_dir, summary)
}

pub fn check(config: &RunConfig, out_dir: &Path) -> CliResult<Completed> {
    let seeds = Seeds::new(config.seed()?);
    let c = &config.check;
    let design = standard_normal_design(c.rows, c.features, seeds.check_design);
    let partition = RoiPartition::blocks(&c.area_sizes)?;
    let conditional = conditional_checks(
        &design,
        &partition,
        &CheckConfig {
            hyper: c.hyper,
            draws: c.draws,
            seed: seeds.checks,
        },
    )?;
    let prior = marginal_prior_check(c.prior_e, c.prior_f, c.prior_draws, seeds.prior_check)?;
    let passed = conditional.passed && prior.pass;
    let worst_z = conditional.joint.iter().map(|m| m.z.abs()).fold(0.0, f64::max);
    let summary = format!(
        "check: {} (max |z| {:.2} over {} draws; prior check vs t with {} df, p = {:.3})",
        if passed { "passed" } else { "FAILED" },
        worst_z,
        conditional.draws,
        prior.degrees_of_freedom,
        prior.p_value
    );
    let mut outputs = Outputs::default();
    outputs.add_json(
        "checks.json",
        &json!({ "passed": passed, "conditional": conditional, "prior": prior }),
    );
    finish("check", config, seeds, None, outputs, out_dir, summary)
}
