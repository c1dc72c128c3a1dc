//! Hierarchical small-area model: voxel coefficients `β_v = u_{A(v)} + z_v`
//! with area effects `u_a ~ N(0, α²_a I)`, voxel effects
//! `z_v ~ N(0, ν²_v I)`, noise `σ²_v`, and inverse-gamma priors
//! `σ² ~ IG(a, b)`, `α² ~ IG(c, d)`, `ν² ~ IG(e, f)`.
//!
//! Posterior summaries come from a systematic-scan Gibbs sampler.

pub mod checks;
mod gibbs;

pub use gibbs::{
    alpha2_conditional, nu2_conditional, sigma2_conditional, z_conditional_covariance, GibbsRng, Sufficient,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::io::{decode_matrix_bin, encode_matrix_bin};
use crate::data::RoiPartition;
use crate::error::{Error, Result};
use crate::field::{CoefficientField, MethodTag, RegularizationMap};
use crate::stats::lag1_autocorrelation;
use gibbs::RotatedChain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Default for Hyperparameters {
    /// Shapes 3 and scales 2, so every prior has mean 1.
    fn default() -> Self {
        Self {
            a: 3.0,
            b: 2.0,
            c: 3.0,
            d: 2.0,
            e: 3.0,
            f: 2.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("d", self.d),
            ("e", self.e),
            ("f", self.f),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "hyperparameters",
                    reason: format!("{name} must be finite and > 0, got {v}"),
                });
            }
        }
        Ok(())
    }
}

fn prior_start(shape: f64, scale: f64) -> f64 {
    if shape > 1.0 {
        scale / (shape - 1.0)
    } else {
        scale
    }
}

/// Current draw of every model parameter, in original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    /// A×P area effects.
    pub u: DMatrix<f64>,
    /// V×P voxel effects.
    pub z: DMatrix<f64>,
    pub sigma2: DVector<f64>,
    pub alpha2: DVector<f64>,
    pub nu2: DVector<f64>,
}

impl GibbsState {
    /// Effects at zero, variances at their prior means (or the scale when
    /// the prior mean is infinite).
    pub fn initial(voxels: usize, areas: usize, features: usize, hyper: &Hyperparameters) -> Self {
        Self {
            u: DMatrix::zeros(areas, features),
            z: DMatrix::zeros(voxels, features),
            sigma2: DVector::from_element(voxels, prior_start(hyper.a, hyper.b)),
            alpha2: DVector::from_element(areas, prior_start(hyper.c, hyper.d)),
            nu2: DVector::from_element(voxels, prior_start(hyper.e, hyper.f)),
        }
    }

    /// `β_v = u_{A(v)} + z_v`, V×P.
    pub fn beta(&self, partition: &RoiPartition) -> DMatrix<f64> {
        let mut b = self.z.clone();
        for v in 0..b.nrows() {
            let a = partition.area_of(v);
            for j in 0..b.ncols() {
                b[(v, j)] += self.u[(a, j)];
            }
        }
        b
    }

    pub fn check_invariants(&self) -> bool {
        self.sigma2.iter().chain(self.alpha2.iter()).chain(self.nu2.iter()).all(|x| *x > 0.0 && x.is_finite())
    }

    /// Checkpoint as five binary matrices back to back: u, z, σ², α², ν²
    /// (vectors stored as single-column matrices).
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in [
            self.u.clone(),
            self.z.clone(),
            DMatrix::from_column_slice(self.sigma2.len(), 1, self.sigma2.as_slice()),
            DMatrix::from_column_slice(self.alpha2.len(), 1, self.alpha2.as_slice()),
            DMatrix::from_column_slice(self.nu2.len(), 1, self.nu2.as_slice()),
        ] {
            out.extend(encode_matrix_bin(&m));
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        let mut mats = Vec::with_capacity(5);
        for _ in 0..5 {
            if rest.len() < 24 {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let rows = u64::from_le_bytes(rest[8..16].try_into().expect("8 bytes")) as usize;
            let cols = u64::from_le_bytes(rest[16..24].try_into().expect("8 bytes")) as usize;
            let len = 24 + rows * cols * 8;
            if rest.len() < len {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            mats.push(decode_matrix_bin(&rest[..len]).map_err(Error::Format)?);
            rest = &rest[len..];
        }
        let vec = |m: &DMatrix<f64>| DVector::from_column_slice(m.as_slice());
        Ok(Self {
            u: mats[0].clone(),
            z: mats[1].clone(),
            sigma2: vec(&mats[2]),
            alpha2: vec(&mats[3]),
            nu2: vec(&mats[4]),
        })
    }
}

/// Draw every parameter from its prior: variances from their inverse-gamma
/// priors, then effects from the Gaussians they scale.
pub fn draw_prior<R: rand::Rng + ?Sized>(
    partition: &RoiPartition,
    features: usize,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> GibbsState {
    use crate::stats::InverseGamma;
    use rand_distr::{Distribution, StandardNormal};
    let (v_count, a_count) = (partition.voxel_count(), partition.area_count());
    let alpha2 = DVector::from_fn(a_count, |_, _| InverseGamma::new(hyper.c, hyper.d).sample(rng));
    let nu2 = DVector::from_fn(v_count, |_, _| InverseGamma::new(hyper.e, hyper.f).sample(rng));
    let sigma2 = DVector::from_fn(v_count, |_, _| InverseGamma::new(hyper.a, hyper.b).sample(rng));
    let mut u = DMatrix::zeros(a_count, features);
    for a in 0..a_count {
        for j in 0..features {
            let e: f64 = StandardNormal.sample(rng);
            u[(a, j)] = e * alpha2[a].sqrt();
        }
    }
    let mut z = DMatrix::zeros(v_count, features);
    for v in 0..v_count {
        for j in 0..features {
            let e: f64 = StandardNormal.sample(rng);
            z[(v, j)] = e * nu2[v].sqrt();
        }
    }
    GibbsState {
        u,
        z,
        sigma2,
        alpha2,
        nu2,
    }
}

/// `y_vt = x_tᵀβ_v + N(0, σ²_v)` for every row and voxel; T×V.
pub fn draw_responses<R: rand::Rng + ?Sized>(
    design: &DMatrix<f64>,
    state: &GibbsState,
    partition: &RoiPartition,
    rng: &mut R,
) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut y = design * state.beta(partition).transpose();
    for v in 0..y.ncols() {
        let sd = state.sigma2[v].sqrt();
        for t in 0..y.nrows() {
            let e: f64 = StandardNormal.sample(rng);
            y[(t, v)] += sd * e;
        }
    }
    y
}

/// One full systematic sweep (z → u → σ² → α² → ν²) in place.
pub fn gibbs_sweep(
    state: &mut GibbsState,
    design: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    partition: &RoiPartition,
    hyper: &Hyperparameters,
    rng: &mut GibbsRng,
) -> Result<()> {
    let suff = Sufficient::new(design, responses)?;
    sweep_with(state, &suff, partition, hyper, rng)
}

/// As [`gibbs_sweep`] with precomputed sufficient statistics.
pub fn sweep_with(
    state: &mut GibbsState,
    suff: &Sufficient,
    partition: &RoiPartition,
    hyper: &Hyperparameters,
    rng: &mut GibbsRng,
) -> Result<()> {
    check_state(state, suff, partition)?;
    let mut chain = RotatedChain::from_state(state, suff);
    gibbs::sweep(&mut chain, suff, partition, hyper, rng)?;
    *state = chain.to_state(suff);
    Ok(())
}

fn check_state(state: &GibbsState, suff: &Sufficient, partition: &RoiPartition) -> Result<()> {
    let (v, a, p) = (suff.voxels(), partition.area_count(), suff.features);
    if partition.voxel_count() != v
        || state.z.shape() != (v, p)
        || state.u.shape() != (a, p)
        || state.sigma2.len() != v
        || state.nu2.len() != v
        || state.alpha2.len() != a
    {
        return Err(Error::Dimension("Gibbs state does not match data and partition".into()));
    }
    if !state.check_invariants() {
        return Err(Error::invalid("state", "variances must be finite and > 0"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeConfig {
    pub hyper: Hyperparameters,
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparameters::default(),
            burn_in: 100,
            thin: 10,
            samples: 150,
            seed: 0,
        }
    }
}

/// Retained-chain trace of one monitored scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoredTrace {
    pub name: String,
    pub lag1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub monitored: Vec<MonitoredTrace>,
    pub max_lag1: f64,
}

impl ChainDiagnostics {
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["statistic", "lag1_autocorrelation"]).expect("in-memory write");
        for m in &self.monitored {
            w.write_record([m.name.clone(), m.lag1.to_string()]).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// V×P posterior mean of `u_{A(v)} + z_v`.
    pub beta_mean: DMatrix<f64>,
    pub beta_sd: DMatrix<f64>,
    pub nu2_mean: DVector<f64>,
    pub sigma2_mean: DVector<f64>,
    pub sample_count: usize,
    pub diagnostics: ChainDiagnostics,
    pub final_state: GibbsState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeFit {
    pub summary: PosteriorSummary,
    pub field: CoefficientField,
    pub regularization: RegularizationMap,
}

/// Voxels whose scalars are traced for the autocorrelation diagnostic.
fn monitored_voxels(v: usize) -> Vec<usize> {
    let n = v.min(5);
    (0..n).map(|k| k * v / n).collect()
}

/// Run `burn_in + thin·samples` sweeps from [`GibbsState::initial`] and
/// average the retained draws.
pub fn sae_fit(
    design: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    partition: &RoiPartition,
    config: &SaeConfig,
) -> Result<SaeFit> {
    config.hyper.validate()?;
    if config.samples == 0 {
        return Err(Error::invalid("samples", "must be >= 1"));
    }
    if config.thin == 0 {
        return Err(Error::invalid("thin", "must be >= 1"));
    }
    let suff = Sufficient::new(design, responses)?;
    let (v_count, p) = (responses.ncols(), design.ncols());
    let a_count = partition.area_count();
    let init = GibbsState::initial(v_count, a_count, p, &config.hyper);
    check_state(&init, &suff, partition)?;
    let mut chain = RotatedChain::from_state(&init, &suff);
    let mut rng = GibbsRng::new(config.seed, v_count, a_count);

    let monitored = monitored_voxels(v_count);
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(config.samples); monitored.len() * 3];
    let mut sum = vec![0.0; v_count * p];
    let mut sum_sq = vec![0.0; v_count * p];
    let mut nu2_sum = vec![0.0; v_count];
    let mut sigma2_sum = vec![0.0; v_count];
    let assignment = partition.assignment();

    let total = config.burn_in + config.thin * config.samples;
    let mut beta_rot = vec![0.0; p];
    for sweep in 1..=total {
        gibbs::sweep(&mut chain, &suff, partition, &config.hyper, &mut rng).map_err(|e| Error::Sweep {
            sweep,
            source: Box::new(e),
        })?;
        if sweep <= config.burn_in || (sweep - config.burn_in) % config.thin != 0 {
            continue;
        }
        for v in 0..v_count {
            let a = assignment[v];
            for i in 0..p {
                beta_rot[i] = chain.u[a * p + i] + chain.z[v * p + i];
            }
            let beta = suff.unrotate(&beta_rot);
            for j in 0..p {
                sum[v * p + j] += beta[j];
                sum_sq[v * p + j] += beta[j] * beta[j];
            }
            nu2_sum[v] += chain.nu2[v];
            sigma2_sum[v] += chain.sigma2[v];
        }
        for (k, &v) in monitored.iter().enumerate() {
            let a = assignment[v];
            let first: f64 = (0..p).map(|i| suff.q[(0, i)] * (chain.u[a * p + i] + chain.z[v * p + i])).sum();
            traces[3 * k].push(first);
            traces[3 * k + 1].push(chain.sigma2[v]);
            traces[3 * k + 2].push(chain.nu2[v]);
        }
    }

    let n = config.samples as f64;
    let beta_mean = DMatrix::from_fn(v_count, p, |v, j| sum[v * p + j] / n);
    let beta_sd = DMatrix::from_fn(v_count, p, |v, j| {
        let m = sum[v * p + j] / n;
        if config.samples > 1 {
            ((sum_sq[v * p + j] - n * m * m) / (n - 1.0)).max(0.0).sqrt()
        } else {
            0.0
        }
    });
    let nu2_mean = DVector::from_iterator(v_count, nu2_sum.iter().map(|s| s / n));
    let sigma2_mean = DVector::from_iterator(v_count, sigma2_sum.iter().map(|s| s / n));

    let mut names = Vec::new();
    for &v in &monitored {
        names.push(format!("beta[{v}][0]"));
        names.push(format!("sigma2[{v}]"));
        names.push(format!("nu2[{v}]"));
    }
    let monitored: Vec<MonitoredTrace> = names
        .into_iter()
        .zip(&traces)
        .map(|(name, t)| MonitoredTrace {
            name,
            lag1: lag1_autocorrelation(t),
        })
        .collect();
    let max_lag1 = monitored.iter().map(|m| m.lag1).fold(f64::NEG_INFINITY, f64::max);

    let summary = PosteriorSummary {
        beta_mean: beta_mean.clone(),
        beta_sd: beta_sd.clone(),
        nu2_mean: nu2_mean.clone(),
        sigma2_mean: sigma2_mean.clone(),
        sample_count: config.samples,
        diagnostics: ChainDiagnostics { monitored, max_lag1 },
        final_state: chain.to_state(&suff),
    };
    let field = CoefficientField::new(beta_mean, beta_sd, sigma2_mean, MethodTag::Sae);
    let mut regularization = RegularizationMap::empty(v_count);
    for (r, n2) in regularization.per_voxel.iter_mut().zip(nu2_mean.iter()) {
        r.posterior_nu2 = Some(*n2);
    }
    regularization
        .notes
        .insert("sae_chain".into(), format!("burn_in={} thin={} samples={}", config.burn_in, config.thin, config.samples));
    Ok(SaeFit {
        summary,
        field,
        regularization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditional_shapes() {
        let h = Hyperparameters {
            a: 1.0,
            ..Default::default()
        };
        assert_eq!(sigma2_conditional(&h, 60, 0.0).shape, 31.0);
        assert_eq!(nu2_conditional(&Hyperparameters::default(), 11, 0.0).shape, 8.5);
        assert_eq!(alpha2_conditional(&Hyperparameters::default(), 4, 0.0).shape, 5.0);
    }

    #[test]
    fn z_covariance_identity_case() {
        let g = DMatrix::<f64>::identity(3, 3);
        let s = z_conditional_covariance(&g, 1.0, 1.0);
        assert!((s - DMatrix::<f64>::identity(3, 3) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn initial_state_uses_prior_means() {
        let s = GibbsState::initial(2, 1, 3, &Hyperparameters::default());
        assert_eq!(s.sigma2[0], 1.0);
        let h = Hyperparameters {
            e: 0.5,
            f: 4.0,
            ..Default::default()
        };
        assert_eq!(GibbsState::initial(2, 1, 3, &h).nu2[1], 4.0);
    }

    #[test]
    fn invalid_hyperparameters() {
        let h = Hyperparameters {
            c: 0.0,
            ..Default::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut s = GibbsState::initial(3, 2, 2, &Hyperparameters::default());
        s.z[(1, 1)] = -0.25;
        s.u[(0, 0)] = 3.5;
        let back = GibbsState::from_checkpoint(&s.to_checkpoint()).unwrap();
        assert_eq!(back, s);
        assert!(GibbsState::from_checkpoint(&s.to_checkpoint()[..40]).is_err());
    }
}
