use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::io::{encode_matrix_bin, encode_matrix_csv};
use crate::error::{Error, Result};

/// Which estimator produced a coefficient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Ols,
    Ridge,
    ElasticNet,
    Sae,
}

impl MethodTag {
    pub fn name(&self) -> &'static str {
        match self {
            MethodTag::Ols => "ols",
            MethodTag::Ridge => "ridge",
            MethodTag::ElasticNet => "elastic_net",
            MethodTag::Sae => "sae",
        }
    }
}

/// Per-voxel coefficients (one row per voxel), their standard errors and
/// the estimated noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    /// V×P.
    pub coefficients: DMatrix<f64>,
    /// V×P, elementwise non-negative.
    pub std_errors: DMatrix<f64>,
    /// Length V, non-negative.
    pub noise_variance: DVector<f64>,
    /// Length V; zero for the intercept-free estimators.
    pub intercepts: DVector<f64>,
    pub method: MethodTag,
    /// Set once a field has been smoothed; the propagated errors assume
    /// independent voxels.
    pub std_errors_approximate: bool,
    /// Set once a field has been smoothed.
    pub smoothed: bool,
}

impl CoefficientField {
    pub fn new(
        coefficients: DMatrix<f64>,
        std_errors: DMatrix<f64>,
        noise_variance: DVector<f64>,
        method: MethodTag,
    ) -> Self {
        let v = coefficients.nrows();
        Self {
            coefficients,
            std_errors,
            noise_variance,
            intercepts: DVector::zeros(v),
            method,
            std_errors_approximate: false,
            smoothed: false,
        }
    }

    pub fn voxels(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn features(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Forward model: T×V predicted activity for the rows of `design`.
    pub fn predict(&self, design: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = design * self.coefficients.transpose();
        for (v, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.intercepts[v]);
        }
        out
    }

    /// Predicted activity of one voxel for one feature row.
    pub fn predict_one(&self, voxel: usize, features: &[f64]) -> f64 {
        self.intercepts[voxel]
            + features
                .iter()
                .enumerate()
                .map(|(j, x)| x * self.coefficients[(voxel, j)])
                .sum::<f64>()
    }

    /// CSV with a `voxel` column followed by one column per coefficient.
    pub fn coefficients_csv(&self) -> Vec<u8> {
        voxel_table(&self.coefficients, "beta")
    }

    pub fn std_errors_csv(&self) -> Vec<u8> {
        voxel_table(&self.std_errors, "se")
    }

    pub fn coefficients_bin(&self) -> Vec<u8> {
        encode_matrix_bin(&self.coefficients)
    }

    pub(crate) fn check_shape(&self, voxels: usize) -> Result<()> {
        if self.voxels() != voxels {
            return Err(Error::Dimension(format!(
                "field has {} voxels, expected {voxels}",
                self.voxels()
            )));
        }
        Ok(())
    }
}

fn voxel_table(m: &DMatrix<f64>, prefix: &str) -> Vec<u8> {
    let mut header = vec!["voxel".to_string()];
    header.extend((0..m.ncols()).map(|j| format!("{prefix}{j}")));
    let mut with_index = DMatrix::zeros(m.nrows(), m.ncols() + 1);
    for i in 0..m.nrows() {
        with_index[(i, 0)] = i as f64;
        for j in 0..m.ncols() {
            with_index[(i, j + 1)] = m[(i, j)];
        }
    }
    encode_matrix_csv(&header, &with_index)
}

/// Regularization intensity chosen for one voxel. Only the fields relevant
/// to the estimator (and smoother) are set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VoxelRegularization {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub en_lambda1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub en_lambda2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior_nu2: Option<f64>,
}

impl VoxelRegularization {
    /// Single scalar summary of shrinkage strength: larger means more
    /// regularization. SAE reports the inverse of the posterior ν² mean.
    pub fn intensity(&self) -> Option<f64> {
        self.ridge_lambda
            .or(self.en_lambda1.map(|l1| l1 + self.en_lambda2.unwrap_or(0.0)))
            .or(self.posterior_nu2.map(|n| 1.0 / n))
            .or(self.smoothing_radius)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularizationMap {
    pub per_voxel: Vec<VoxelRegularization>,
    /// Free-form provenance notes (e.g. standardization used by a solver).
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl RegularizationMap {
    pub fn empty(voxels: usize) -> Self {
        Self {
            per_voxel: vec![VoxelRegularization::default(); voxels],
            notes: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.per_voxel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_voxel.is_empty()
    }

    pub fn intensities(&self) -> Vec<Option<f64>> {
        self.per_voxel.iter().map(|r| r.intensity()).collect()
    }

    /// CSV with columns voxel, ridge_lambda, en_lambda1, en_lambda2,
    /// smoothing_radius, posterior_nu2 (empty cells when unset).
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "voxel",
            "ridge_lambda",
            "en_lambda1",
            "en_lambda2",
            "smoothing_radius",
            "posterior_nu2",
        ])
        .expect("in-memory write");
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for (v, r) in self.per_voxel.iter().enumerate() {
            w.write_record([
                v.to_string(),
                cell(r.ridge_lambda),
                cell(r.en_lambda1),
                cell(r.en_lambda2),
                cell(r.smoothing_radius),
                cell(r.posterior_nu2),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Fold another map's set fields into this one (later wins).
    pub fn merge(&mut self, other: &RegularizationMap) {
        for (mine, theirs) in self.per_voxel.iter_mut().zip(&other.per_voxel) {
            mine.ridge_lambda = theirs.ridge_lambda.or(mine.ridge_lambda);
            mine.en_lambda1 = theirs.en_lambda1.or(mine.en_lambda1);
            mine.en_lambda2 = theirs.en_lambda2.or(mine.en_lambda2);
            mine.smoothing_radius = theirs.smoothing_radius.or(mine.smoothing_radius);
            mine.posterior_nu2 = theirs.posterior_nu2.or(mine.posterior_nu2);
        }
        self.notes.extend(other.notes.clone());
    }
}
