//! One systematic Gibbs sweep of the small-area model.
//!
//! `XᵀX = QΛQᵀ` is diagonalized once per fit. In the rotated basis every
//! Gaussian full conditional has a diagonal precision, so a voxel update
//! costs O(P) rather than a P×P factorization. Public state is kept in the
//! original coordinates; [`RotatedChain`] holds the rotated working copy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{GibbsState, Hyperparameters};
use crate::data::RoiPartition;
use crate::error::{Error, Result};
use crate::stats::InverseGamma;

/// Conditional of σ²_v given the residual sum of squares over `rows` rows.
pub fn sigma2_conditional(hyper: &Hyperparameters, rows: usize, rss: f64) -> InverseGamma {
    InverseGamma::new((2.0 * hyper.a + rows as f64) / 2.0, (2.0 * hyper.b + rss) / 2.0)
}

/// Conditional of α²_a given `u_aᵀu_a` over `features` coefficients.
pub fn alpha2_conditional(hyper: &Hyperparameters, features: usize, sq_norm: f64) -> InverseGamma {
    InverseGamma::new((2.0 * hyper.c + features as f64) / 2.0, (2.0 * hyper.d + sq_norm) / 2.0)
}

/// Conditional of ν²_v given `z_vᵀz_v` over `features` coefficients.
pub fn nu2_conditional(hyper: &Hyperparameters, features: usize, sq_norm: f64) -> InverseGamma {
    InverseGamma::new((2.0 * hyper.e + features as f64) / 2.0, (2.0 * hyper.f + sq_norm) / 2.0)
}

/// Covariance `(ν⁻²I + σ⁻²XᵀX)⁻¹` of the z_v conditional, in original
/// coordinates.
pub fn z_conditional_covariance(gram: &DMatrix<f64>, sigma2: f64, nu2: f64) -> DMatrix<f64> {
    let p = gram.nrows();
    let prec = DMatrix::<f64>::identity(p, p) / nu2 + gram / sigma2;
    prec.try_inverse().expect("precision is positive definite")
}

/// Sufficient statistics of the data, rotated into the eigenbasis of XᵀX.
#[derive(Debug, Clone)]
pub struct Sufficient {
    /// Columns are eigenvectors of XᵀX.
    pub q: DMatrix<f64>,
    /// Eigenvalues (clamped at 0).
    pub eig: Vec<f64>,
    /// V×P row-major: row v is `Qᵀ Xᵀ y_v`.
    pub xty: Vec<f64>,
    pub yty: Vec<f64>,
    pub rows: usize,
    pub features: usize,
}

impl Sufficient {
    pub fn new(design: &DMatrix<f64>, responses: &DMatrix<f64>) -> Result<Self> {
        if design.nrows() != responses.nrows() {
            return Err(Error::Dimension("design/response row mismatch".into()));
        }
        let p = design.ncols();
        let eigen = SymmetricEigen::new(design.tr_mul(design));
        let q = eigen.eigenvectors;
        let eig: Vec<f64> = eigen.eigenvalues.iter().map(|l| l.max(0.0)).collect();
        let rotated = q.tr_mul(&design.tr_mul(responses)); // P×V
        let v_count = responses.ncols();
        let mut xty = vec![0.0; v_count * p];
        for v in 0..v_count {
            for i in 0..p {
                xty[v * p + i] = rotated[(i, v)];
            }
        }
        let yty = responses.column_iter().map(|c| c.norm_squared()).collect();
        Ok(Self {
            q,
            eig,
            xty,
            yty,
            rows: design.nrows(),
            features: p,
        })
    }

    pub fn voxels(&self) -> usize {
        self.yty.len()
    }

    pub(crate) fn rotate(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        self.q.tr_mul(&v).iter().copied().collect()
    }

    pub(crate) fn unrotate(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        (&self.q * v).iter().copied().collect()
    }
}

/// Independent generator streams: one per voxel lane and one per area lane,
/// all derived from a single master seed.
#[derive(Debug, Clone)]
pub struct GibbsRng {
    pub(crate) voxel: Vec<ChaCha8Rng>,
    pub(crate) area: Vec<ChaCha8Rng>,
}

impl GibbsRng {
    pub fn new(seed: u64, voxels: usize, areas: usize) -> Self {
        let lane = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(stream);
            r
        };
        Self {
            voxel: (0..voxels as u64).map(lane).collect(),
            area: (0..areas as u64).map(|a| lane(voxels as u64 + a)).collect(),
        }
    }
}

/// Working state in the rotated basis, row-major `V×P` / `A×P`.
#[derive(Debug, Clone)]
pub(crate) struct RotatedChain {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub nu2: Vec<f64>,
}

impl RotatedChain {
    pub fn from_state(state: &GibbsState, suff: &Sufficient) -> Self {
        let p = suff.features;
        let mut z = Vec::with_capacity(state.z.nrows() * p);
        for v in 0..state.z.nrows() {
            let row: Vec<f64> = state.z.row(v).iter().copied().collect();
            z.extend(suff.rotate(&row));
        }
        let mut u = Vec::with_capacity(state.u.nrows() * p);
        for a in 0..state.u.nrows() {
            let row: Vec<f64> = state.u.row(a).iter().copied().collect();
            u.extend(suff.rotate(&row));
        }
        Self {
            z,
            u,
            sigma2: state.sigma2.iter().copied().collect(),
            alpha2: state.alpha2.iter().copied().collect(),
            nu2: state.nu2.iter().copied().collect(),
        }
    }

    pub fn to_state(&self, suff: &Sufficient) -> GibbsState {
        let p = suff.features;
        let v_count = self.sigma2.len();
        let a_count = self.alpha2.len();
        let mut z = DMatrix::zeros(v_count, p);
        for v in 0..v_count {
            let row = suff.unrotate(&self.z[v * p..(v + 1) * p]);
            for j in 0..p {
                z[(v, j)] = row[j];
            }
        }
        let mut u = DMatrix::zeros(a_count, p);
        for a in 0..a_count {
            let row = suff.unrotate(&self.u[a * p..(a + 1) * p]);
            for j in 0..p {
                u[(a, j)] = row[j];
            }
        }
        GibbsState {
            u,
            z,
            sigma2: DVector::from_vec(self.sigma2.clone()),
            alpha2: DVector::from_vec(self.alpha2.clone()),
            nu2: DVector::from_vec(self.nu2.clone()),
        }
    }
}

fn finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

fn draw_ig(ig: InverseGamma, rng: &mut ChaCha8Rng, site: &'static str, what: &'static str, index: usize) -> Result<f64> {
    if !ig.is_valid() {
        return Err(Error::NumericalBlowup { site, what, index });
    }
    let x = ig.sample(rng);
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::NumericalBlowup { site, what, index });
    }
    Ok(x)
}

/// Systematic scan: all z_v, all u_a, all σ²_v, all α²_a, all ν²_v.
pub(crate) fn sweep(
    chain: &mut RotatedChain,
    suff: &Sufficient,
    partition: &RoiPartition,
    hyper: &Hyperparameters,
    rng: &mut GibbsRng,
) -> Result<()> {
    let p = suff.features;
    let eig = &suff.eig;
    let assignment = partition.assignment();

    // z_v | u, σ², ν²
    {
        let u = &chain.u;
        let sigma2 = &chain.sigma2;
        let nu2 = &chain.nu2;
        chain
            .z
            .par_chunks_mut(p.max(1))
            .zip(rng.voxel.par_iter_mut())
            .enumerate()
            .try_for_each(|(v, (z, r))| -> Result<()> {
                let ua = &u[assignment[v] * p..(assignment[v] + 1) * p];
                let c = &suff.xty[v * p..(v + 1) * p];
                let (is2, in2) = (1.0 / sigma2[v], 1.0 / nu2[v]);
                for i in 0..p {
                    let prec = in2 + eig[i] * is2;
                    let mean = (c[i] - eig[i] * ua[i]) * is2 / prec;
                    let eps: f64 = StandardNormal.sample(r);
                    z[i] = mean + eps / prec.sqrt();
                }
                if !finite(z) {
                    return Err(Error::NumericalBlowup { site: "z", what: "voxel", index: v });
                }
                Ok(())
            })?;
    }

    // u_a | z, σ², α²
    {
        let z = &chain.z;
        let sigma2 = &chain.sigma2;
        let alpha2 = &chain.alpha2;
        chain
            .u
            .par_chunks_mut(p.max(1))
            .zip(rng.area.par_iter_mut())
            .enumerate()
            .try_for_each(|(a, (u, r))| -> Result<()> {
                let members = &partition.areas()[a].members;
                let inv_sum: f64 = members.iter().map(|&v| 1.0 / sigma2[v]).sum();
                let ia2 = 1.0 / alpha2[a];
                for i in 0..p {
                    let b: f64 = members
                        .iter()
                        .map(|&v| (suff.xty[v * p + i] - eig[i] * z[v * p + i]) / sigma2[v])
                        .sum();
                    let prec = ia2 + eig[i] * inv_sum;
                    let eps: f64 = StandardNormal.sample(r);
                    u[i] = b / prec + eps / prec.sqrt();
                }
                if !finite(u) {
                    return Err(Error::NumericalBlowup { site: "u", what: "area", index: a });
                }
                Ok(())
            })?;
    }

    // σ²_v | β_v, then ν²_v | z_v (same voxel lane, fixed order)
    let mut new_sigma2 = vec![0.0; chain.sigma2.len()];
    {
        let z = &chain.z;
        let u = &chain.u;
        new_sigma2
            .par_iter_mut()
            .zip(rng.voxel.par_iter_mut())
            .enumerate()
            .try_for_each(|(v, (s2, r))| -> Result<()> {
                let ua = &u[assignment[v] * p..(assignment[v] + 1) * p];
                let zv = &z[v * p..(v + 1) * p];
                let c = &suff.xty[v * p..(v + 1) * p];
                let mut rss = suff.yty[v];
                for i in 0..p {
                    let b = ua[i] + zv[i];
                    rss += -2.0 * b * c[i] + eig[i] * b * b;
                }
                let ig = sigma2_conditional(hyper, suff.rows, rss.max(0.0));
                *s2 = draw_ig(ig, r, "sigma2", "voxel", v)?;
                Ok(())
            })?;
    }
    chain.sigma2 = new_sigma2;

    for a in 0..chain.alpha2.len() {
        let sq: f64 = chain.u[a * p..(a + 1) * p].iter().map(|x| x * x).sum();
        chain.alpha2[a] = draw_ig(alpha2_conditional(hyper, p, sq), &mut rng.area[a], "alpha2", "area", a)?;
    }

    {
        let z = &chain.z;
        chain
            .nu2
            .par_iter_mut()
            .zip(rng.voxel.par_iter_mut())
            .enumerate()
            .try_for_each(|(v, (n2, r))| -> Result<()> {
                let sq: f64 = z[v * p..(v + 1) * p].iter().map(|x| x * x).sum();
                *n2 = draw_ig(nu2_conditional(hyper, p, sq), r, "nu2", "voxel", v)?;
                Ok(())
            })?;
    }
    Ok(())
}
