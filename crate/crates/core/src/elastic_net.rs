//! Elastic net by cyclic coordinate descent, with per-voxel K-fold
//! cross-validation over a (λ1, λ2) grid.
//!
//! The raw solver minimizes `‖y − Xβ‖² + λ1‖β‖₁ + λ2‖β‖²` exactly as given.
//! Cross-validation works on a standardized copy of each training split
//! (columns centered and scaled to unit norm, response centered) and maps
//! the winning coefficients back to the original scale plus an unpenalized
//! intercept.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::select_rows;
use crate::error::{Error, Result};
use crate::field::{CoefficientField, MethodTag, RegularizationMap};
use crate::linalg::{cholesky, log_space};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Quadratic form of a least-squares problem: `G = XᵀX`, `c = Xᵀy`,
/// `yty = yᵀy`. Coordinate descent only needs these.
#[derive(Debug, Clone)]
pub struct GramProblem {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub yty: f64,
}

impl GramProblem {
    pub fn new(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows, response {}",
                design.nrows(),
                response.len()
            )));
        }
        Ok(Self {
            g: design.tr_mul(design),
            c: design.tr_mul(response),
            yty: response.norm_squared(),
        })
    }

    pub fn objective(&self, beta: &DVector<f64>, lambda1: f64, lambda2: f64) -> f64 {
        let rss = self.yty - 2.0 * beta.dot(&self.c) + beta.dot(&(&self.g * beta));
        rss + lambda1 * beta.lp_norm(1) + lambda2 * beta.norm_squared()
    }

    /// Largest KKT violation of `beta`.
    pub fn kkt_residual(&self, beta: &DVector<f64>, lambda1: f64, lambda2: f64) -> f64 {
        let q = &self.c - &self.g * beta; // Xᵀr
        kkt_from_gradient(&q, beta, lambda1, lambda2)
    }

    /// `1 + max_j |2 xⱼᵀy|`: the tolerance unit for KKT checks.
    pub fn scale(&self) -> f64 {
        1.0 + 2.0 * self.c.amax()
    }

    /// Smallest λ1 at which the lasso solution is identically zero.
    pub fn null_threshold(&self) -> f64 {
        2.0 * self.c.amax()
    }
}

fn kkt_from_gradient(q: &DVector<f64>, beta: &DVector<f64>, lambda1: f64, lambda2: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..beta.len() {
        let grad = 2.0 * q[j];
        let r = if beta[j] != 0.0 {
            (grad - lambda1 * beta[j].signum() - 2.0 * lambda2 * beta[j]).abs()
        } else {
            (grad.abs() - lambda1).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnSolution {
    pub beta: DVector<f64>,
    pub sweeps: usize,
    pub kkt_residual: f64,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
}

/// Coordinate descent on a prepared quadratic form, optionally warm-started.
pub fn solve_gram(
    problem: &GramProblem,
    lambda1: f64,
    lambda2: f64,
    tol: f64,
    max_iter: usize,
    warm: Option<&DVector<f64>>,
) -> Result<EnSolution> {
    if !(lambda1 >= 0.0) || !lambda1.is_finite() {
        return Err(Error::invalid("lambda1", format!("must be finite and >= 0, got {lambda1}")));
    }
    if !(lambda2 >= 0.0) || !lambda2.is_finite() {
        return Err(Error::invalid("lambda2", format!("must be finite and >= 0, got {lambda2}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be > 0"));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter", "must be >= 1"));
    }
    let p = problem.c.len();
    let mut beta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
    let threshold = tol * problem.scale();
    let half_l1 = 0.5 * lambda1;
    let mut q = &problem.c - &problem.g * &beta;
    let mut trace = Vec::new();
    let mut kkt = f64::INFINITY;

    for sweep in 1..=max_iter {
        for j in 0..p {
            let gjj = problem.g[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let rho = q[j] + gjj * beta[j];
            let new = soft_threshold(rho, half_l1) / (gjj + lambda2);
            let delta = new - beta[j];
            if delta != 0.0 {
                q.axpy(-delta, &problem.g.column(j), 1.0);
                beta[j] = new;
            }
        }
        trace.push(problem.objective(&beta, lambda1, lambda2));
        q = &problem.c - &problem.g * &beta;
        kkt = kkt_from_gradient(&q, &beta, lambda1, lambda2);
        if kkt <= threshold {
            return Ok(EnSolution {
                beta,
                sweeps: sweep,
                kkt_residual: kkt,
                objective_trace: trace,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        kkt_residual: kkt,
        last: beta.iter().copied().collect(),
    })
}

/// Minimize `‖y − Xβ‖² + λ1‖β‖₁ + λ2‖β‖²` on the raw design, coordinates
/// visited in ascending order.
pub fn elastic_net_fit(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EnSolution> {
    let problem = GramProblem::new(design, response)?;
    solve_gram(&problem, lambda1, lambda2, tol, max_iter, None)
}

/// Column centering/scaling of one training split.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub means: DVector<f64>,
    /// Norms of the centered columns; zero for constant columns.
    pub norms: DVector<f64>,
    /// Standardized Gram matrix `X̃ᵀX̃`.
    pub gram: DMatrix<f64>,
    design: DMatrix<f64>,
}

impl Standardizer {
    pub fn new(design: &DMatrix<f64>) -> Self {
        let (t, p) = design.shape();
        let means = DVector::from_iterator(p, design.column_iter().map(|c| c.sum() / t.max(1) as f64));
        let mut x = design.clone();
        let mut norms = DVector::zeros(p);
        for j in 0..p {
            let mut col = x.column_mut(j);
            col.add_scalar_mut(-means[j]);
            let n = col.norm();
            norms[j] = n;
            if n > 0.0 {
                col /= n;
            } else {
                col.fill(0.0);
            }
        }
        Self {
            means,
            norms,
            gram: x.tr_mul(&x),
            design: x,
        }
    }

    /// Quadratic form for one response (centered internally); returns the
    /// response mean too.
    pub fn problem(&self, response: &DVector<f64>) -> (GramProblem, f64) {
        let mean = response.mean();
        let centered = response.add_scalar(-mean);
        (
            GramProblem {
                g: self.gram.clone(),
                c: self.design.tr_mul(&centered),
                yty: centered.norm_squared(),
            },
            mean,
        )
    }

    /// Map standardized coefficients back to raw scale; returns
    /// `(beta, intercept)`.
    pub fn unscale(&self, b: &DVector<f64>, response_mean: f64) -> (DVector<f64>, f64) {
        let beta = DVector::from_iterator(
            b.len(),
            b.iter().zip(self.norms.iter()).map(|(b, n)| if *n > 0.0 { b / n } else { 0.0 }),
        );
        let intercept = response_mean - beta.dot(&self.means);
        (beta, intercept)
    }
}

/// Fit on the standardized problem and return raw-scale `(beta, intercept)`.
pub fn elastic_net_fit_standardized(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, f64)> {
    if design.nrows() != response.len() {
        return Err(Error::Dimension("design/response row mismatch".into()));
    }
    let st = Standardizer::new(design);
    let (problem, mean) = st.problem(response);
    let sol = solve_gram(&problem, lambda1, lambda2, tol, max_iter, None)?;
    Ok(st.unscale(&sol.beta, mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnGrids {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl EnGrids {
    /// 20 log-spaced λ1 values from the standardized null threshold down four
    /// decades; λ2 in {0, 0.01, 0.1, 1, 10} times the mean diagonal of the
    /// standardized Gram matrix.
    pub fn default_for(design: &DMatrix<f64>, response: &DVector<f64>) -> Self {
        let st = Standardizer::new(design);
        let (problem, _) = st.problem(response);
        let mut top = problem.null_threshold();
        if !(top > 0.0) {
            top = 1.0;
        }
        let s = crate::linalg::mean_diagonal(&st.gram);
        Self {
            lambda1: log_space(top, top * 1e-4, 20),
            lambda2: [0.0, 0.01, 0.1, 1.0, 10.0].iter().map(|m| m * s).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda1.is_empty() || self.lambda2.is_empty() {
            return Err(Error::invalid("grids", "must not be empty"));
        }
        if self
            .lambda1
            .iter()
            .chain(&self.lambda2)
            .any(|l| !(*l >= 0.0) || !l.is_finite())
        {
            return Err(Error::invalid("grids", "values must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Cross-validation surface for one voxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnPath {
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
    /// `cv_error[i][k]`: mean held-out MSE at `(lambda1_grid[i], lambda2_grid[k])`.
    pub cv_error: Vec<Vec<f64>>,
    /// Indices into the two grids.
    pub selected: (usize, usize),
}

impl EnPath {
    pub fn selected_values(&self) -> (f64, f64) {
        (self.lambda1_grid[self.selected.0], self.lambda2_grid[self.selected.1])
    }

    /// CSV rows `lambda1,lambda2,cv_error`.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lambda1", "lambda2", "cv_error"]).expect("in-memory write");
        for (i, l1) in self.lambda1_grid.iter().enumerate() {
            for (k, l2) in self.lambda2_grid.iter().enumerate() {
                w.write_record([l1.to_string(), l2.to_string(), self.cv_error[i][k].to_string()])
                    .expect("in-memory write");
            }
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Seeded assignment of `n` rows to `k` folds, sizes differing by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidFolds(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidFolds(format!("{n} rows cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    Ok(fold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnCvOptions {
    pub folds: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EnCvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

struct FoldData {
    standardizer: Standardizer,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn prepare_folds(design: &DMatrix<f64>, options: &EnCvOptions) -> Result<Vec<FoldData>> {
    let assignment = fold_assignment(design.nrows(), options.folds, options.seed)?;
    (0..options.folds)
        .map(|k| {
            let train: Vec<usize> = (0..design.nrows()).filter(|&r| assignment[r] != k).collect();
            let test: Vec<usize> = (0..design.nrows()).filter(|&r| assignment[r] == k).collect();
            if test.is_empty() || train.is_empty() {
                return Err(Error::InvalidFolds(format!("fold {k} is empty")));
            }
            Ok(FoldData {
                standardizer: Standardizer::new(&select_rows(design, &train)),
                train,
                test,
            })
        })
        .collect()
}

fn cv_one(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    grids: &EnGrids,
    folds: &[FoldData],
    options: &EnCvOptions,
) -> Result<(EnPath, DVector<f64>, f64)> {
    let n1 = grids.lambda1.len();
    let n2 = grids.lambda2.len();
    let mut sum = vec![vec![0.0; n2]; n1];
    // visit λ1 from largest to smallest so warm starts follow the path
    let mut order: Vec<usize> = (0..n1).collect();
    order.sort_by(|&a, &b| grids.lambda1[b].total_cmp(&grids.lambda1[a]).then(a.cmp(&b)));

    for fold in folds {
        let y_train = DVector::from_iterator(fold.train.len(), fold.train.iter().map(|&r| response[r]));
        let (problem, mean) = fold.standardizer.problem(&y_train);
        for (k, &l2) in grids.lambda2.iter().enumerate() {
            let mut warm: Option<DVector<f64>> = None;
            for &i in &order {
                let sol = solve_gram(&problem, grids.lambda1[i], l2, options.tol, options.max_iter, warm.as_ref())?;
                let (beta, intercept) = fold.standardizer.unscale(&sol.beta, mean);
                let mse = fold
                    .test
                    .iter()
                    .map(|&r| {
                        let pred = intercept + design.row(r).transpose().dot(&beta);
                        (response[r] - pred).powi(2)
                    })
                    .sum::<f64>()
                    / fold.test.len() as f64;
                sum[i][k] += mse;
                warm = Some(sol.beta);
            }
        }
    }
    let cv_error: Vec<Vec<f64>> = sum
        .into_iter()
        .map(|row| row.into_iter().map(|s| s / folds.len() as f64).collect())
        .collect();

    let mut selected = (0, 0);
    let mut best = f64::INFINITY;
    for i in 0..n1 {
        for k in 0..n2 {
            let e = cv_error[i][k];
            let (si, sk) = selected;
            let better = e < best
                || (e == best
                    && (grids.lambda1[i] > grids.lambda1[si]
                        || (grids.lambda1[i] == grids.lambda1[si] && grids.lambda2[k] > grids.lambda2[sk])));
            if better {
                best = e;
                selected = (i, k);
            }
        }
    }
    let path = EnPath {
        lambda1_grid: grids.lambda1.clone(),
        lambda2_grid: grids.lambda2.clone(),
        cv_error,
        selected,
    };
    let (l1, l2) = path.selected_values();
    let (beta, intercept) = elastic_net_fit_standardized(design, response, l1, l2, options.tol, options.max_iter)?;
    Ok((path, beta, intercept))
}

/// K-fold cross-validation for one response. Returns the path together with
/// the raw-scale refit `(beta, intercept)` at the selected pair.
pub fn elastic_net_cv(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    grids: &EnGrids,
    options: &EnCvOptions,
) -> Result<(EnPath, DVector<f64>, f64)> {
    if design.nrows() != response.len() {
        return Err(Error::Dimension("design/response row mismatch".into()));
    }
    grids.validate()?;
    let folds = prepare_folds(design, options)?;
    cv_one(design, response, grids, &folds, options)
}

/// Per-voxel elastic-net cross-validation. `grids = None` uses
/// [`EnGrids::default_for`] on each voxel.
pub fn elastic_net_cv_field(
    design: &DMatrix<f64>,
    responses: &DMatrix<f64>,
    grids: Option<&EnGrids>,
    options: &EnCvOptions,
) -> Result<(CoefficientField, RegularizationMap, Vec<EnPath>)> {
    if design.nrows() != responses.nrows() {
        return Err(Error::Dimension("design/response row mismatch".into()));
    }
    if let Some(g) = grids {
        g.validate()?;
    }
    let folds = prepare_folds(design, options)?;
    let fits: Vec<(EnPath, DVector<f64>, f64)> = (0..responses.ncols())
        .into_par_iter()
        .map(|v| {
            let y = responses.column(v).into_owned();
            let owned;
            let grids = match grids {
                Some(g) => g,
                None => {
                    owned = EnGrids::default_for(design, &y);
                    &owned
                }
            };
            cv_one(design, &y, grids, &folds, options).map_err(|e| Error::VoxelFit {
                voxel: v,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let (t, p) = design.shape();
    let v_count = responses.ncols();
    let mut coefficients = DMatrix::zeros(v_count, p);
    let mut intercepts = DVector::zeros(v_count);
    for (v, (_, beta, b0)) in fits.iter().enumerate() {
        coefficients.set_row(v, &beta.transpose());
        intercepts[v] = *b0;
    }
    let mut noise = DVector::zeros(v_count);
    let mut std_errors = DMatrix::zeros(v_count, p);
    let standardizer = Standardizer::new(design);
    for (v, (path, beta, b0)) in fits.iter().enumerate() {
        let resid = responses.column(v) - design * beta;
        let sigma2 = resid.add_scalar(-*b0).norm_squared() / t.max(1) as f64;
        noise[v] = sigma2;
        let (_, l2) = path.selected_values();
        let se = active_set_std_errors(&standardizer, beta, l2, sigma2);
        std_errors.set_row(v, &se.transpose());
    }
    let mut field = CoefficientField::new(coefficients, std_errors, noise, MethodTag::ElasticNet);
    field.intercepts = intercepts;
    field.std_errors_approximate = true;

    let mut map = RegularizationMap::empty(v_count);
    for (r, (path, _, _)) in map.per_voxel.iter_mut().zip(&fits) {
        let (l1, l2) = path.selected_values();
        r.en_lambda1 = Some(l1);
        r.en_lambda2 = Some(l2);
    }
    map.notes.insert(
        "elastic_net_standardization".into(),
        "columns centered and scaled to unit norm; response centered; lambdas on the standardized scale".into(),
    );
    map.notes.insert("elastic_net_folds".into(), options.folds.to_string());
    let paths = fits.into_iter().map(|(p, _, _)| p).collect();
    Ok((field, map, paths))
}

/// Ridge-style sandwich on the active set in standardized coordinates,
/// mapped back to the raw scale. Inactive coefficients get 0.
fn active_set_std_errors(st: &Standardizer, beta: &DVector<f64>, lambda2: f64, sigma2: f64) -> DVector<f64> {
    let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0 && st.norms[j] > 0.0).collect();
    let mut out = DVector::zeros(beta.len());
    if active.is_empty() {
        return out;
    }
    let g = DMatrix::from_fn(active.len(), active.len(), |a, b| st.gram[(active[a], active[b])]);
    let mut m = g.clone();
    for i in 0..active.len() {
        m[(i, i)] += lambda2;
    }
    let Some(chol) = cholesky(&m) else {
        return out;
    };
    let minv = chol.inverse();
    let diag = (&minv * &g * &minv).diagonal();
    for (a, &j) in active.iter().enumerate() {
        out[j] = (sigma2 * diag[a]).max(0.0).sqrt() / st.norms[j];
    }
    out
}
