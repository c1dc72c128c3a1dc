//! Spatial smoothing of coefficient fields.
//!
//! Both smoothers are linear in the field: `β̃_v = Σ_u c_vu β_u`. Ball
//! smoothing averages uniformly over an ℓ1/ℓ2 ball of per-voxel radius; ROI
//! smoothing solves `(I + γΩ_A) B̃_A = B_A` in each area, with
//! `Ω_A = 2(D_A − Q_A)` the doubled graph Laplacian of the within-area
//! affinities `q_ij`. Because OLS is linear in the responses, smoothing the
//! responses with the same weights and refitting gives the same field.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ball_neighbors, select_rows, BallNorm, Dataset, RoiPartition, VoxelGeometry};
use crate::error::{Error, Result};
use crate::evaluation::voxel_accuracies;
use crate::field::CoefficientField;
use crate::linalg::cholesky;
use crate::ridge::ols_fit;

/// Within-area affinity between two voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RoiWeights {
    /// `q_ij = 1`.
    Uniform,
    /// `q_ij = exp(−d(i,j)² / h²)` with Euclidean physical distance.
    Gaussian { bandwidth: f64 },
}

impl RoiWeights {
    fn affinity(&self, geometry: &VoxelGeometry, i: usize, j: usize) -> f64 {
        match *self {
            RoiWeights::Uniform => 1.0,
            RoiWeights::Gaussian { bandwidth } => {
                let d = geometry.distance(i, j, BallNorm::L2);
                (-(d * d) / (bandwidth * bandwidth)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothingSpec {
    /// Radii in mm, one per voxel.
    Ball { norm: BallNorm, radii: Vec<f64> },
    Roi { gamma: f64, weights: RoiWeights },
}

impl SmoothingSpec {
    /// Same radius at every voxel.
    pub fn ball_uniform(norm: BallNorm, radius: f64, voxels: usize) -> Self {
        SmoothingSpec::Ball {
            norm,
            radii: vec![radius; voxels],
        }
    }

    pub fn validate(&self, voxels: usize) -> Result<()> {
        match self {
            SmoothingSpec::Ball { radii, .. } => {
                if radii.len() != voxels {
                    return Err(Error::Dimension(format!("{} radii for {voxels} voxels", radii.len())));
                }
                if let Some(r) = radii.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
                    return Err(Error::invalid("radius", format!("must be finite and >= 0, got {r}")));
                }
            }
            SmoothingSpec::Roi { gamma, weights } => {
                if !(*gamma >= 0.0) || !gamma.is_finite() {
                    return Err(Error::invalid("gamma", format!("must be finite and >= 0, got {gamma}")));
                }
                if let RoiWeights::Gaussian { bandwidth } = weights {
                    if !(*bandwidth > 0.0) || !bandwidth.is_finite() {
                        return Err(Error::invalid("bandwidth", format!("must be finite and > 0, got {bandwidth}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Row {
    /// Uniform average over the listed voxels.
    Mean(Vec<usize>),
    Weighted(Vec<(usize, f64)>),
}

/// The V×V weight matrix `C` of a smoother, stored by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingOperator {
    rows: Vec<Row>,
}

impl SmoothingOperator {
    pub fn identity(voxels: usize) -> Self {
        Self {
            rows: (0..voxels).map(|v| Row::Mean(vec![v])).collect(),
        }
    }

    pub fn build(spec: &SmoothingSpec, geometry: &VoxelGeometry, partition: &RoiPartition) -> Result<Self> {
        let v_count = geometry.len();
        spec.validate(v_count)?;
        if partition.voxel_count() != v_count {
            return Err(Error::Dimension("partition and geometry voxel counts differ".into()));
        }
        match spec {
            SmoothingSpec::Ball { norm, radii } => {
                let rows = (0..v_count)
                    .into_par_iter()
                    .map(|v| ball_neighbors(geometry, v, *norm, radii[v]).map(Row::Mean))
                    .collect::<Result<_>>()?;
                Ok(Self { rows })
            }
            SmoothingSpec::Roi { gamma, weights } => {
                let mut rows = vec![Row::Mean(Vec::new()); v_count];
                for area in partition.areas() {
                    let m = &area.members;
                    let inv = roi_inverse(geometry, m, *gamma, weights)
                        .ok_or_else(|| Error::SingularSystem(format!("ROI smoothing of area {}", area.id)))?;
                    for (a, &v) in m.iter().enumerate() {
                        rows[v] = Row::Weighted(m.iter().enumerate().map(|(b, &u)| (u, inv[(a, b)])).collect());
                    }
                }
                Ok(Self { rows })
            }
        }
    }

    pub fn voxels(&self) -> usize {
        self.rows.len()
    }

    /// Dense copy of `C`.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut c = DMatrix::zeros(n, n);
        for (v, row) in self.rows.iter().enumerate() {
            match row {
                Row::Mean(nb) => {
                    for &u in nb {
                        c[(v, u)] = 1.0 / nb.len() as f64;
                    }
                }
                Row::Weighted(w) => {
                    for &(u, x) in w {
                        c[(v, u)] = x;
                    }
                }
            }
        }
        c
    }

    /// `Σ_u c_vu` per row. Averaging rows sum to exactly 1.
    pub fn row_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| match row {
                Row::Mean(nb) => nb.len() as f64 / nb.len() as f64,
                Row::Weighted(w) => w.iter().map(|(_, x)| x).sum(),
            })
            .collect()
    }

    fn combine(&self, v: usize, value: impl Fn(usize) -> f64) -> f64 {
        match &self.rows[v] {
            Row::Mean(nb) => nb.iter().map(|&u| value(u)).sum::<f64>() / nb.len() as f64,
            Row::Weighted(w) => w.iter().map(|&(u, x)| x * value(u)).sum(),
        }
    }

    /// `C M` for a V×K matrix with one row per voxel.
    pub fn apply_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |v, k| self.combine(v, |u| m[(u, k)]))
    }

    /// `Y Cᵀ` for a T×V response matrix: column `v` becomes `Σ_u c_vu y_u`.
    pub fn apply_columns(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(y.nrows(), y.ncols(), |t, v| self.combine(v, |u| y[(t, u)]))
    }

    /// Smooth coefficients and intercepts; standard errors become
    /// `sqrt(Σ_u c_vu² se_u²)` (independence across voxels assumed) and are
    /// flagged approximate.
    pub fn apply_field(&self, field: &CoefficientField) -> Result<CoefficientField> {
        field.check_shape(self.voxels())?;
        let var = field.std_errors.map(|s| s * s);
        let se = DMatrix::from_fn(var.nrows(), var.ncols(), |v, k| {
            let s2 = match &self.rows[v] {
                Row::Mean(nb) => {
                    let n = nb.len() as f64;
                    nb.iter().map(|&u| var[(u, k)]).sum::<f64>() / (n * n)
                }
                Row::Weighted(w) => w.iter().map(|&(u, x)| x * x * var[(u, k)]).sum(),
            };
            s2.max(0.0).sqrt()
        });
        let intercepts = DVector::from_fn(field.voxels(), |v, _| self.combine(v, |u| field.intercepts[u]));
        Ok(CoefficientField {
            coefficients: self.apply_rows(&field.coefficients),
            std_errors: se,
            noise_variance: field.noise_variance.clone(),
            intercepts,
            method: field.method,
            std_errors_approximate: true,
            smoothed: true,
        })
    }
}

/// `Ω_A = 2(D − Q)` over the listed members (diagonal of `Q` is zero).
pub fn area_laplacian(geometry: &VoxelGeometry, members: &[usize], weights: &RoiWeights) -> DMatrix<f64> {
    let n = members.len();
    let mut omega = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            let q = weights.affinity(geometry, members[a], members[b]);
            omega[(a, b)] = -2.0 * q;
            omega[(b, a)] = -2.0 * q;
            omega[(a, a)] += 2.0 * q;
            omega[(b, b)] += 2.0 * q;
        }
    }
    omega
}

fn roi_inverse(geometry: &VoxelGeometry, members: &[usize], gamma: f64, weights: &RoiWeights) -> Option<DMatrix<f64>> {
    let n = members.len();
    let mut m = area_laplacian(geometry, members, weights) * gamma;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    // I + γΩ is positive definite for γ ≥ 0
    let chol = cholesky(&m)?;
    Some(chol.inverse())
}

pub fn smooth_ball(
    field: &CoefficientField,
    geometry: &VoxelGeometry,
    norm: BallNorm,
    radii: &[f64],
) -> Result<CoefficientField> {
    let spec = SmoothingSpec::Ball {
        norm,
        radii: radii.to_vec(),
    };
    let partition = RoiPartition::single(geometry.len())?;
    SmoothingOperator::build(&spec, geometry, &partition)?.apply_field(field)
}

pub fn smooth_roi(
    field: &CoefficientField,
    geometry: &VoxelGeometry,
    partition: &RoiPartition,
    gamma: f64,
    weights: RoiWeights,
) -> Result<CoefficientField> {
    let spec = SmoothingSpec::Roi { gamma, weights };
    SmoothingOperator::build(&spec, geometry, partition)?.apply_field(field)
}

/// Smooth with whichever kind `spec` describes.
pub fn smooth_field(
    field: &CoefficientField,
    spec: &SmoothingSpec,
    geometry: &VoxelGeometry,
    partition: &RoiPartition,
) -> Result<CoefficientField> {
    SmoothingOperator::build(spec, geometry, partition)?.apply_field(field)
}

/// OLS on the smoothed responses `Y Cᵀ`.
pub fn smoothed_ols(dataset: &Dataset, spec: &SmoothingSpec) -> Result<CoefficientField> {
    let op = SmoothingOperator::build(spec, dataset.geometry(), dataset.rois())?;
    let mut field = ols_fit(dataset.design(), &op.apply_columns(dataset.responses()))?;
    field.smoothed = true;
    Ok(field)
}

/// `{0, 1, 2, 3, 4} × min spacing`.
pub fn default_radius_grid(geometry: &VoxelGeometry) -> Vec<f64> {
    let s = geometry.min_spacing();
    (0..5).map(|k| k as f64 * s).collect()
}

pub fn default_gamma_grid() -> Vec<f64> {
    vec![0.0, 0.1, 0.3, 1.0, 3.0]
}

/// `{1, 2, 4} × min spacing`.
pub fn default_bandwidth_grid(geometry: &VoxelGeometry) -> Vec<f64> {
    let s = geometry.min_spacing();
    vec![s, 2.0 * s, 4.0 * s]
}

/// Per-voxel validation accuracy for each grid radius, and the radius chosen
/// at each voxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSelection {
    pub grid: Vec<f64>,
    /// `accuracy[k][v]` at `grid[k]`.
    pub accuracy: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
}

/// Fit on `inner_train`, smooth the field at each grid radius, and pick per
/// voxel the radius with the best single-voxel zero-shot accuracy on
/// `validation`. Ties go to the smaller radius.
#[allow(clippy::too_many_arguments)]
pub fn select_radius<F>(
    dataset: &Dataset,
    fit: F,
    norm: BallNorm,
    grid: &[f64],
    inner_train: &[usize],
    validation: &[usize],
    seed: u64,
) -> Result<RadiusSelection>
where
    F: Fn(&DMatrix<f64>, &DMatrix<f64>) -> Result<CoefficientField>,
{
    if grid.is_empty() {
        return Err(Error::invalid("radius grid", "must not be empty"));
    }
    let field = fit(
        &select_rows(dataset.design(), inner_train),
        &select_rows(dataset.responses(), inner_train),
    )?;
    let (x_val, y_val) = (
        select_rows(dataset.design(), validation),
        select_rows(dataset.responses(), validation),
    );
    let v_count = dataset.voxels();
    let accuracy: Vec<Vec<f64>> = grid
        .iter()
        .map(|&r| {
            let smoothed = smooth_ball(&field, dataset.geometry(), norm, &vec![r; v_count])?;
            Ok(voxel_accuracies(&smoothed.predict(&x_val), &y_val, seed))
        })
        .collect::<Result<_>>()?;
    let radii = (0..v_count)
        .map(|v| {
            let mut best = 0;
            for k in 1..grid.len() {
                let (a, b) = (accuracy[k][v], accuracy[best][v]);
                if a > b || (a == b && grid[k] < grid[best]) {
                    best = k;
                }
            }
            grid[best]
        })
        .collect();
    Ok(RadiusSelection {
        grid: grid.to_vec(),
        accuracy,
        radii,
    })
}

/// Globally tuned ROI smoothing parameters and their validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSelection {
    pub gamma: f64,
    pub weights: RoiWeights,
    pub mean_accuracy: f64,
}

/// Fit on `inner_train` and choose the `(γ, weights)` pair maximizing mean
/// single-voxel validation accuracy. Ties go to the smaller γ, then to the
/// earlier weight candidate.
#[allow(clippy::too_many_arguments)]
pub fn select_roi<F>(
    dataset: &Dataset,
    fit: F,
    gammas: &[f64],
    candidates: &[RoiWeights],
    inner_train: &[usize],
    validation: &[usize],
    seed: u64,
) -> Result<RoiSelection>
where
    F: Fn(&DMatrix<f64>, &DMatrix<f64>) -> Result<CoefficientField>,
{
    if gammas.is_empty() || candidates.is_empty() {
        return Err(Error::invalid("roi grid", "must not be empty"));
    }
    let field = fit(
        &select_rows(dataset.design(), inner_train),
        &select_rows(dataset.responses(), inner_train),
    )?;
    let (x_val, y_val) = (
        select_rows(dataset.design(), validation),
        select_rows(dataset.responses(), validation),
    );
    let mut best: Option<RoiSelection> = None;
    for &gamma in gammas {
        for weights in candidates {
            let smoothed = smooth_roi(&field, dataset.geometry(), dataset.rois(), gamma, *weights)?;
            let acc = voxel_accuracies(&smoothed.predict(&x_val), &y_val, seed);
            let mean = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
            let better = match &best {
                None => true,
                Some(b) => mean > b.mean_accuracy || (mean == b.mean_accuracy && gamma < b.gamma),
            };
            if better {
                best = Some(RoiSelection {
                    gamma,
                    weights: *weights,
                    mean_accuracy: mean,
                });
            }
        }
    }
    Ok(best.expect("grids are nonempty"))
}
