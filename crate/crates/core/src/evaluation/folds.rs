use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Default number of rows dropped at each train/test edge of a time series.
pub const DEFAULT_DYNAMIC_TRIM: usize = 5;

/// One outer fold with its inner tuning split. Row indices refer to the
/// dataset rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Subset of `train` used to fit while tuning smoothing.
    pub inner_train: Vec<usize>,
    /// Subset of `train` used to score smoothing candidates.
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub trim: usize,
    pub seed: u64,
    pub contiguous: bool,
}

/// Split `rows` into `k` (train, test) pairs.
///
/// Random: a seeded shuffle dealt round-robin. Contiguous: `k` consecutive
/// blocks (the first `n mod k` one row longer), with `trim` positions on
/// either side of each test block removed from its training set.
pub fn split_rows(
    rows: &[usize],
    k: usize,
    contiguous: bool,
    trim: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let n = rows.len();
    if k < 2 {
        return Err(Error::InvalidFolds(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} rows cannot fill {k} folds")));
    }
    let mut out = Vec::with_capacity(k);
    if contiguous {
        let (base, extra) = (n / k, n % k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            let end = start + len;
            let lo = start.saturating_sub(trim);
            let hi = (end + trim).min(n);
            let test = rows[start..end].to_vec();
            let train: Vec<usize> = rows[..lo].iter().chain(&rows[hi..]).copied().collect();
            out.push((train, test));
            start = end;
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut fold_of = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            fold_of[i] = pos % k;
        }
        for f in 0..k {
            let test = (0..n).filter(|&i| fold_of[i] == f).map(|i| rows[i]).collect();
            let train = (0..n).filter(|&i| fold_of[i] != f).map(|i| rows[i]).collect();
            out.push((train, test));
        }
    }
    for (f, (train, test)) in out.iter().enumerate() {
        if train.is_empty() || test.is_empty() {
            return Err(Error::InsufficientData(format!(
                "fold {f} is empty after trimming ({} train, {} test rows)",
                train.len(),
                test.len()
            )));
        }
    }
    Ok(out)
}

/// Inner split of a training set: 8/9 to fit, 1/9 to validate.
///
/// Random rows for static data; for time series the validation block is the
/// last ninth of the training rows with `trim` rows before it dropped.
fn inner_split(train: &[usize], contiguous: bool, trim: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = train.len();
    let n_val = (n / 9).max(1);
    let (fit, val) = if contiguous {
        let cut = n - n_val;
        (train[..cut.saturating_sub(trim)].to_vec(), train[cut..].to_vec())
    } else {
        let mut order = train.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut val = order[..n_val].to_vec();
        let mut fit = order[n_val..].to_vec();
        val.sort_unstable();
        fit.sort_unstable();
        (fit, val)
    };
    if fit.is_empty() || val.is_empty() {
        return Err(Error::InsufficientData(format!(
            "inner split of {n} training rows leaves an empty side"
        )));
    }
    Ok((fit, val))
}

/// Outer folds plus inner splits. `trim = None` picks 5 for dynamic and 0
/// for static datasets.
pub fn make_fold_plan(dataset: &Dataset, outer_folds: usize, trim: Option<usize>, seed: u64) -> Result<FoldPlan> {
    let contiguous = dataset.kind().is_dynamic();
    let trim = trim.unwrap_or(if contiguous { DEFAULT_DYNAMIC_TRIM } else { 0 });
    let rows: Vec<usize> = (0..dataset.rows()).collect();
    let outer = split_rows(&rows, outer_folds, contiguous, trim, seed)?;
    let folds = outer
        .into_iter()
        .enumerate()
        .map(|(k, (train, test))| {
            let (inner_train, validation) = inner_split(&train, contiguous, trim, derive_seed(seed, k as u64))?;
            Ok(Fold {
                train,
                test,
                inner_train,
                validation,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FoldPlan {
        folds,
        trim,
        seed,
        contiguous,
    })
}

/// Child seed for sub-component `index` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contiguous_blocks_trim_both_edges() {
        let rows: Vec<usize> = (0..100).collect();
        let splits = split_rows(&rows, 10, true, 5, 0).unwrap();
        let (train, test) = &splits[3];
        assert_eq!(test, &(30..40).collect::<Vec<_>>());
        assert!(train.iter().all(|&r| !(25..45).contains(&r)));
        assert_eq!(train.len(), 80);
        // edge folds lose only one side
        assert_eq!(splits[0].0.len(), 85);
    }

    #[test]
    fn random_split_is_a_partition() {
        let rows: Vec<usize> = (0..23).collect();
        let splits = split_rows(&rows, 4, false, 0, 9).unwrap();
        let mut all: Vec<usize> = splits.iter().flat_map(|(_, t)| t.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, rows);
        for (train, test) in &splits {
            assert_eq!(train.len() + test.len(), 23);
        }
    }

    #[test]
    fn over_trimmed_fold_is_an_error() {
        let rows: Vec<usize> = (0..12).collect();
        assert!(split_rows(&rows, 2, true, 6, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
