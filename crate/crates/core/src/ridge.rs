//! Ordinary least squares and ridge regression with per-voxel generalized
//! cross-validation.
//!
//! All voxels share the design `X`, so `XᵀX` and one factorization per
//! distinct penalty are computed once and reused across voxels.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CoefficientField, MethodTag, RegularizationMap};
use crate::linalg::{cholesky, gram, log_space, mean_diagonal};

fn check_shapes(design: &DMatrix<f64>, responses: &DMatrix<f64>) -> Result<()> {
    if design.nrows() != responses.nrows() {
        return Err(Error::Dimension(format!(
            "design has {} rows, responses {}",
            design.nrows(),
            responses.nrows()
        )));
    }
    Ok(())
}

fn residual_ss(design: &DMatrix<f64>, y: &DMatrix<f64>, beta: &DMatrix<f64>) -> DVector<f64> {
    let resid = y - design * beta;
    DVector::from_iterator(resid.ncols(), resid.column_iter().map(|c| c.norm_squared()))
}

/// OLS per voxel. `σ̂²_v = RSS_v / (T − P)`, standard errors from
/// `σ̂²_v (XᵀX)⁻¹`.
pub fn ols_fit(design: &DMatrix<f64>, responses: &DMatrix<f64>) -> Result<CoefficientField> {
    check_shapes(design, responses)?;
    let (t, p) = design.shape();
    if t < p {
        return Err(Error::SingularDesign);
    }
    if t == p {
        return Err(Error::InsufficientData(format!(
            "OLS noise variance needs T > P (T = P = {p})"
        )));
    }
    let g = gram(design);
    let chol = cholesky(&g).ok_or(Error::SingularDesign)?;
    let beta = chol.solve(&design.tr_mul(responses)); // P×V
    let rss = residual_ss(design, responses, &beta);
    let sigma2 = rss / (t - p) as f64;
    let ginv_diag = chol.inverse().diagonal();
    let se = DMatrix::from_fn(responses.ncols(), p, |v, j| (sigma2[v] * ginv_diag[j]).max(0.0).sqrt());
    Ok(CoefficientField::new(beta.transpose(), se, sigma2, MethodTag::Ols))
}

/// Ridge per voxel with `λ_v` taken from `lambdas`.
///
/// `σ̂²_v = RSS_v / T`; standard errors from the sandwich
/// `σ̂²_v (XᵀX+λI)⁻¹ XᵀX (XᵀX+λI)⁻¹`.
pub fn ridge_fit(design: &DMatrix<f64>, responses: &DMatrix<f64>, lambdas: &[f64]) -> Result<CoefficientField> {
    check_shapes(design, responses)?;
    let v_count = responses.ncols();
    if lambdas.len() != v_count {
        return Err(Error::Dimension(format!(
            "{} lambdas for {v_count} voxels",
            lambdas.len()
        )));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {bad}")));
    }
    let (t, p) = design.shape();
    let g = gram(design);
    let xty = design.tr_mul(responses);

    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (v, l) in lambdas.iter().enumerate() {
        groups.entry(l.to_bits()).or_default().push(v);
    }

    let mut beta = DMatrix::zeros(p, v_count);
    let mut sandwich = DMatrix::zeros(v_count, p);
    for (bits, voxels) in &groups {
        let lambda = f64::from_bits(*bits);
        let mut m = g.clone();
        for j in 0..p {
            m[(j, j)] += lambda;
        }
        let chol = cholesky(&m).ok_or(Error::SingularDesign)?;
        let minv = chol.inverse();
        let diag = (&minv * &g * &minv).diagonal();
        for &v in voxels {
            let b = chol.solve(&xty.column(v).into_owned());
            beta.set_column(v, &b);
            for j in 0..p {
                sandwich[(v, j)] = diag[j];
            }
        }
    }
    let rss = residual_ss(design, responses, &beta);
    let sigma2 = rss / t.max(1) as f64;
    let se = DMatrix::from_fn(v_count, p, |v, j| (sigma2[v] * sandwich[(v, j)]).max(0.0).sqrt());
    Ok(CoefficientField::new(beta.transpose(), se, sigma2, MethodTag::Ridge))
}

/// 30 log-spaced penalties over `[1e-3·s, 1e3·s]`, `s` the mean diagonal of
/// `XᵀX`.
pub fn default_ridge_grid(design: &DMatrix<f64>) -> Vec<f64> {
    let s = mean_diagonal(&gram(design)).max(f64::MIN_POSITIVE);
    log_space(1e-3 * s, 1e3 * s, 30)
}

/// GCV score for each grid point; `None` where the hat-matrix trace equals
/// the row count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvCurve {
    pub lambdas: Vec<f64>,
    pub scores: Vec<Option<f64>>,
}

/// Thin SVD of the shared design, reused for every voxel's GCV curve.
pub struct GcvBasis {
    u: DMatrix<f64>,
    d2: DVector<f64>,
    rows: usize,
}

impl GcvBasis {
    pub fn new(design: &DMatrix<f64>) -> Self {
        let svd = SVD::new(design.clone(), true, false);
        let smax = svd.singular_values.max();
        let cutoff = smax * 1e-12 * design.nrows().max(design.ncols()) as f64;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cutoff)
            .collect();
        let u_full = svd.u.expect("U requested");
        let u = DMatrix::from_fn(design.nrows(), keep.len(), |r, c| u_full[(r, keep[c])]);
        let d2 = DVector::from_iterator(keep.len(), keep.iter().map(|&i| svd.singular_values[i].powi(2)));
        Self {
            u,
            d2,
            rows: design.nrows(),
        }
    }

    /// `(RSS(λ)/T) / (1 − tr(H_λ)/T)²`, or `None` when `tr(H_λ) = T`.
    pub fn curve(&self, response: &DVector<f64>, grid: &[f64]) -> GcvCurve {
        let t = self.rows as f64;
        let proj = self.u.tr_mul(response);
        let outside = (response - &self.u * &proj).norm_squared();
        let scores = grid
            .iter()
            .map(|&lambda| {
                let mut rss = outside;
                let mut trace = 0.0;
                for (i, &d2) in self.d2.iter().enumerate() {
                    let shrink = d2 / (d2 + lambda);
                    trace += shrink;
                    rss += ((1.0 - shrink) * proj[i]).powi(2);
                }
                let denom = 1.0 - trace / t;
                if denom <= 1e-12 {
                    None
                } else {
                    Some((rss / t) / (denom * denom))
                }
            })
            .collect();
        GcvCurve {
            lambdas: grid.to_vec(),
            scores,
        }
    }

    /// Grid value minimizing GCV; exact ties go to the larger λ.
    pub fn select(&self, response: &DVector<f64>, grid: &[f64]) -> Result<(f64, GcvCurve)> {
        validate_grid(grid)?;
        let curve = self.curve(response, grid);
        let mut best: Option<(f64, f64)> = None;
        for (&lambda, score) in grid.iter().zip(&curve.scores) {
            let Some(score) = *score else { continue };
            match best {
                Some((_, s)) if score > s => {}
                Some((l, s)) if score == s && lambda < l => {}
                _ => best = Some((lambda, score)),
            }
        }
        let (lambda, _) = best.ok_or(Error::DegenerateGcv)?;
        Ok((lambda, curve))
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "must not be empty"));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("grid", format!("values must be finite and >= 0, got {bad}")));
    }
    Ok(())
}

/// Select λ for a single response by generalized cross-validation.
pub fn gcv_select(design: &DMatrix<f64>, response: &DVector<f64>, grid: &[f64]) -> Result<(f64, GcvCurve)> {
    if design.nrows() != response.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, response {}",
            design.nrows(),
            response.len()
        )));
    }
    GcvBasis::new(design).select(response, grid)
}

/// Per-voxel GCV followed by ridge at each voxel's selected λ.
pub fn ridge_fit_cv(
    design: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    grid: &[f64],
) -> Result<(CoefficientField, RegularizationMap)> {
    check_shapes(design, responses)?;
    validate_grid(grid)?;
    let basis = GcvBasis::new(design);
    let lambdas: Vec<f64> = (0..responses.ncols())
        .into_par_iter()
        .map(|v| {
            basis
                .select(&responses.column(v).into_owned(), grid)
                .map(|(l, _)| l)
                .map_err(|e| Error::VoxelFit {
                    voxel: v,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let field = ridge_fit(design, responses, &lambdas)?;
    let mut map = RegularizationMap::empty(responses.ncols());
    for (r, l) in map.per_voxel.iter_mut().zip(&lambdas) {
        r.ridge_lambda = Some(*l);
    }
    map.notes.insert("ridge_tuning".into(), "per-voxel GCV".into());
    Ok((field, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_single_column() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let y = DMatrix::from_row_slice(2, 1, &[2.0, 4.0]);
        // T = 2 > P = 1
        let f = ols_fit(&x, &y).unwrap();
        assert!((f.coefficients[(0, 0)] - 2.0).abs() < 1e-14);
        assert!(f.noise_variance[0].abs() < 1e-24);
    }

    #[test]
    fn orthonormal_design_gives_projection() {
        let x = DMatrix::from_row_slice(4, 2, &[0.5, 0.5, 0.5, -0.5, 0.5, 0.5, 0.5, -0.5]);
        let y = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 5.0]);
        let f = ols_fit(&x, &y).unwrap();
        let expect = x.tr_mul(&y);
        for j in 0..2 {
            assert!((f.coefficients[(0, j)] - expect[(j, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_design_is_singular() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(ols_fit(&x, &y), Err(Error::SingularDesign)));
        assert!(matches!(ridge_fit(&x, &y, &[0.0]), Err(Error::SingularDesign)));
        assert!(ridge_fit(&x, &y, &[0.1]).is_ok());
    }

    #[test]
    fn negative_lambda_rejected() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(
            ridge_fit(&x, &y, &[-1.0]),
            Err(Error::InvalidParameter { name: "lambda", .. })
        ));
    }

    #[test]
    fn interpolating_design_is_degenerate() {
        // T = P = 2 with λ = 0 is an interpolation: tr(H) = T
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(gcv_select(&x, &y, &[0.0]), Err(Error::DegenerateGcv)));
        let (l, curve) = gcv_select(&x, &y, &[0.0, 1.0]).unwrap();
        assert_eq!(l, 1.0);
        assert!(curve.scores[0].is_none());
    }

    #[test]
    fn empty_grid_rejected() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_element(3, 1.0);
        assert!(gcv_select(&x, &y, &[]).is_err());
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        // zero response: RSS = 0 at every λ, so every score ties at 0
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::zeros(3);
        let (l, _) = gcv_select(&x, &y, &[0.1, 1.0, 10.0]).unwrap();
        assert_eq!(l, 10.0);
    }

    #[test]
    fn default_grid_spans_six_decades() {
        let x = DMatrix::from_element(10, 2, 1.0);
        let g = default_ridge_grid(&x);
        assert_eq!(g.len(), 30);
        assert!((g[0] - 1e-2).abs() < 1e-15);
        assert!((g[29] - 1e4).abs() < 1e-8);
    }
}
