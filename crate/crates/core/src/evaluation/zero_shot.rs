//! Binary zero-shot decoding and normalized RSS.
//!
//! For a held-out pair of stimuli `(i, j)` the forward model predicts
//! activity for both. Each observed activity is then assigned to the closer
//! prediction; a decision is correct when it picks its own stimulus, and an
//! exact tie earns half credit. Every pair therefore contributes two
//! decisions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::average_ranks;

/// Above this many pairs, pairs are sampled instead of enumerated.
pub const MAX_EXHAUSTIVE_PAIRS: usize = 10_000;

/// `RSS / TSS` per voxel, with TSS taken around `train_mean`. `None` when
/// the denominator is zero.
pub fn normalized_rss(
    predicted: &DMatrix<f64>,
    observed: &DMatrix<f64>,
    train_mean: &DVector<f64>,
) -> Result<Vec<Option<f64>>> {
    let (rss, tss) = rss_tss(predicted, observed, train_mean)?;
    Ok(rss.iter().zip(&tss).map(|(r, t)| (*t > 0.0).then(|| r / t)).collect())
}

/// Per-voxel residual and total sums of squares.
pub fn rss_tss(
    predicted: &DMatrix<f64>,
    observed: &DMatrix<f64>,
    train_mean: &DVector<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if predicted.shape() != observed.shape() || train_mean.len() != observed.ncols() {
        return Err(Error::Dimension("prediction, observation and mean shapes disagree".into()));
    }
    let mut rss = vec![0.0; observed.ncols()];
    let mut tss = vec![0.0; observed.ncols()];
    for v in 0..observed.ncols() {
        for t in 0..observed.nrows() {
            rss[v] += (observed[(t, v)] - predicted[(t, v)]).powi(2);
            tss[v] += (observed[(t, v)] - train_mean[v]).powi(2);
        }
    }
    Ok((rss, tss))
}

/// Outcome of assigning one observed activity to one of two candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Index (0 or 1) of the candidate chosen; ties choose 0.
    pub chosen: usize,
    /// 1, 0, or 0.5 for a tie.
    pub credit: f64,
}

fn decide(d_own: f64, d_other: f64, own: usize) -> Decision {
    if d_own < d_other {
        Decision { chosen: own, credit: 1.0 }
    } else if d_own > d_other {
        Decision { chosen: 1 - own, credit: 0.0 }
    } else {
        Decision { chosen: 0, credit: 0.5 }
    }
}

/// Single-voxel decision for one stimulus pair: `observed[k]` was evoked by
/// candidate `k`. Returns one decision per observed activity.
pub fn zero_shot_voxel(
    beta: &[f64],
    intercept: f64,
    observed: [f64; 2],
    candidates: [&[f64]; 2],
) -> [Decision; 2] {
    let pred = candidates.map(|x| intercept + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>());
    [0, 1].map(|k| decide((observed[k] - pred[k]).abs(), (observed[k] - pred[1 - k]).abs(), k))
}

/// Pairs of positions in `0..n`: all of them when there are at most
/// [`MAX_EXHAUSTIVE_PAIRS`], otherwise that many drawn with replacement.
/// The flag reports whether sampling was used.
pub fn stimulus_pairs(n: usize, seed: u64) -> (Vec<(usize, usize)>, bool) {
    let total = n * n.saturating_sub(1) / 2;
    if total <= MAX_EXHAUSTIVE_PAIRS {
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        return (pairs, false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..MAX_EXHAUSTIVE_PAIRS)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i.min(j), i.max(j))
        })
        .collect();
    (pairs, true)
}

/// Summed credit and decision count per voxel over `pairs`, from
/// predictions and observations with matching rows.
pub fn voxel_pair_credits(predicted: &DMatrix<f64>, observed: &DMatrix<f64>, pairs: &[(usize, usize)]) -> Vec<f64> {
    (0..observed.ncols())
        .map(|v| {
            let mut credit = 0.0;
            for &(i, j) in pairs {
                let (pi, pj) = (predicted[(i, v)], predicted[(j, v)]);
                let (yi, yj) = (observed[(i, v)], observed[(j, v)]);
                credit += decide((yi - pi).abs(), (yi - pj).abs(), 0).credit;
                credit += decide((yj - pj).abs(), (yj - pi).abs(), 0).credit;
            }
            credit
        })
        .collect()
}

/// Per-voxel zero-shot accuracy over all (or sampled) row pairs.
pub fn voxel_accuracies(predicted: &DMatrix<f64>, observed: &DMatrix<f64>, seed: u64) -> Vec<f64> {
    let (pairs, _) = stimulus_pairs(observed.nrows(), seed);
    let decisions = 2.0 * pairs.len() as f64;
    voxel_pair_credits(predicted, observed, &pairs)
        .into_iter()
        .map(|c| if decisions > 0.0 { c / decisions } else { 0.5 })
        .collect()
}

/// `1 / rank` with rank 1 for the most accurate voxel; tied accuracies share
/// the mean of their ranks.
pub fn rank_weights(accuracies: &[f64]) -> Vec<f64> {
    let negated: Vec<f64> = accuracies.iter().map(|a| -a).collect();
    average_ranks(&negated).into_iter().map(|r| 1.0 / r).collect()
}

/// Whole-brain credit and decision count for the given pairs. The distance
/// from an observed pattern to a prediction is `Σ_v w_v (y_v − ŷ_v)²`.
pub fn brain_pair_credits(
    predicted: &DMatrix<f64>,
    observed: &DMatrix<f64>,
    weights: &[f64],
    pairs: &[(usize, usize)],
) -> (f64, usize) {
    let dist = |obs: usize, pred: usize| -> f64 {
        (0..observed.ncols())
            .map(|v| weights[v] * (observed[(obs, v)] - predicted[(pred, v)]).powi(2))
            .sum()
    };
    let mut credit = 0.0;
    for &(i, j) in pairs {
        credit += decide(dist(i, i), dist(i, j), 0).credit;
        credit += decide(dist(j, j), dist(j, i), 0).credit;
    }
    (credit, 2 * pairs.len())
}

/// Whole-brain zero-shot accuracy of predictions against observations.
pub fn zero_shot_brain(predicted: &DMatrix<f64>, observed: &DMatrix<f64>, weights: &[f64], seed: u64) -> f64 {
    let (pairs, _) = stimulus_pairs(observed.nrows(), seed);
    let (credit, n) = brain_pair_credits(predicted, observed, weights, &pairs);
    if n == 0 {
        0.5
    } else {
        credit / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_beta_is_a_tie() {
        let d = zero_shot_voxel(&[0.0, 0.0], 0.3, [1.0, -2.0], [&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(d[0].credit + d[1].credit, 1.0);
        assert_eq!(d[0].chosen, 0);
    }

    #[test]
    fn noiseless_voxel_is_always_right() {
        let beta = [1.5, -0.5];
        let (x0, x1) = ([1.0, 2.0], [0.0, 1.0]);
        let y = [1.5 - 1.0, -0.5];
        let d = zero_shot_voxel(&beta, 0.0, y, [&x0, &x1]);
        assert_eq!((d[0].chosen, d[1].chosen), (0, 1));
        assert_eq!(d[0].credit + d[1].credit, 2.0);
    }

    #[test]
    fn ranks_descend_with_shared_ties() {
        let w = rank_weights(&[0.9, 0.5, 0.7, 0.5]);
        assert_eq!(w, vec![1.0, 1.0 / 3.5, 0.5, 1.0 / 3.5]);
    }

    #[test]
    fn pair_enumeration_and_sampling() {
        let (p, sampled) = stimulus_pairs(6, 0);
        assert_eq!((p.len(), sampled), (15, false));
        let (p, sampled) = stimulus_pairs(200, 0);
        assert!(sampled && p.len() == MAX_EXHAUSTIVE_PAIRS);
        assert!(p.iter().all(|&(i, j)| i < j && j < 200));
    }

    #[test]
    fn constant_voxel_nrss_is_missing() {
        let obs = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 1.0, 5.0]);
        let pred = DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 1.0, 4.0]);
        let r = normalized_rss(&pred, &obs, &DVector::from_vec(vec![1.0, 4.0])).unwrap();
        assert_eq!(r, vec![None, Some(1.0)]);
    }
}
