use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A lagged design together with the responses trimmed to line up with it.
#[derive(Debug, Clone)]
pub struct LaggedDesign {
    pub design: DMatrix<f64>,
    pub responses: Option<DMatrix<f64>>,
}

/// Concatenate the `lag` previous rows of `base` into each output row.
///
/// Output row `i` corresponds to time `t = i + lag` and holds base rows
/// `t-1, t-2, …, t-lag` (most recent first), so column block `k-1` carries
/// the coefficients of the k-th lag. Time `t` itself is excluded. The first
/// `lag` response rows have no full history and are dropped.
pub fn build_lag_design(
    base: &DMatrix<f64>,
    lag: usize,
    responses: Option<&DMatrix<f64>>,
) -> Result<LaggedDesign> {
    if lag == 0 {
        return Err(Error::invalid("lag", "must be at least 1"));
    }
    let t = base.nrows();
    if t <= lag {
        return Err(Error::InsufficientHistory { rows: t, lag });
    }
    if let Some(y) = responses {
        if y.nrows() != t {
            return Err(Error::Dimension(format!(
                "base has {t} rows but responses have {}",
                y.nrows()
            )));
        }
    }
    let p0 = base.ncols();
    let design = DMatrix::from_fn(t - lag, p0 * lag, |i, col| {
        let k = col / p0 + 1;
        base[(i + lag - k, col % p0)]
    });
    let responses = responses.map(|y| y.rows(lag, t - lag).into_owned());
    Ok(LaggedDesign { design, responses })
}
