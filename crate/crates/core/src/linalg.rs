use nalgebra::{Cholesky, DMatrix, Dyn};

/// Relative pivot threshold below which a Cholesky factor is treated as
/// singular.
const PIVOT_TOL: f64 = 1e-12;

pub(crate) fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

/// Cholesky factorization that also rejects numerically singular matrices
/// (smallest squared pivot tiny relative to the largest diagonal entry).
pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if l.nrows() > 0 && !(min_pivot > PIVOT_TOL * scale) {
        return None;
    }
    Some(chol)
}

/// `n` points evenly spaced in log10 between `lo` and `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

pub(crate) fn mean_diagonal(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.diagonal().sum() / m.nrows() as f64
}
