//! Impurity criteria and exhaustive best-split search.

use crate::error::{Error, Result};

use super::DenseMatrix;

/// Splits whose impurity decrease does not exceed this are not taken.
pub const MIN_DECREASE: f64 = 1e-12;

/// `1 - sum(p_k^2)` over class counts.
pub fn gini_impurity(counts: &[f64]) -> Result<f64> {
    if counts.iter().any(|&c| c < 0.0) {
        return Err(Error::invalid("negative class count"));
    }
    let n: f64 = counts.iter().sum();
    if n <= 0.0 {
        return Err(Error::invalid("gini impurity of an empty node"));
    }
    Ok(1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>())
}

/// Population variance.
pub fn variance_impurity(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("variance of an empty node"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Response a node is split on.
#[derive(Clone, Copy, Debug)]
pub enum Response<'a> {
    /// Class index per row, `n_classes` distinct values.
    Classes {
        labels: &'a [u32],
        n_classes: usize,
    },
    Values(&'a [f64]),
}

impl Response<'_> {
    pub fn criterion_name(&self) -> &'static str {
        match self {
            Response::Classes { .. } => "gini",
            Response::Values(_) => "variance",
        }
    }

    /// Impurity of the rows in `rows` (duplicates count with multiplicity).
    pub fn impurity(&self, rows: &[usize]) -> f64 {
        match *self {
            Response::Classes { labels, n_classes } => {
                let mut counts = vec![0.0; n_classes];
                for &r in rows {
                    counts[labels[r] as usize] += 1.0;
                }
                gini_impurity(&counts).unwrap_or(0.0)
            }
            Response::Values(values) => {
                let v: Vec<f64> = rows.iter().map(|&r| values[r]).collect();
                variance_impurity(&v).unwrap_or(0.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Parent impurity minus the size-weighted child impurities.
    pub decrease: f64,
}

/// Midpoint between two consecutive distinct values that stays strictly below `hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Reusable buffers for [`best_split`].
#[derive(Default)]
pub(crate) struct SplitScratch {
    pairs: Vec<(f64, u32)>,
    counts: Vec<f64>,
    shifted: Vec<f64>,
}

/// Finds the split of `rows` that maximizes the impurity decrease over the
/// candidate features, trying every midpoint between distinct sorted values.
/// Ties go to the lowest feature index, then the lowest threshold.
pub fn best_split(
    x: &DenseMatrix,
    response: Response<'_>,
    rows: &[usize],
    candidates: &[usize],
    min_samples_leaf: usize,
) -> Option<Split> {
    let mut scratch = SplitScratch::default();
    best_split_with(x, response, rows, candidates, min_samples_leaf, &mut scratch)
}

pub(crate) fn best_split_with(
    x: &DenseMatrix,
    response: Response<'_>,
    rows: &[usize],
    candidates: &[usize],
    min_samples_leaf: usize,
    scratch: &mut SplitScratch,
) -> Option<Split> {
    let n = rows.len();
    let min_leaf = min_samples_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let nf = n as f64;

    // Per-row statistic: class index, or response shifted by the node mean.
    let total_q;
    match response {
        Response::Classes { labels, n_classes } => {
            scratch.counts.clear();
            scratch.counts.resize(n_classes, 0.0);
            for &r in rows {
                scratch.counts[labels[r] as usize] += 1.0;
            }
            total_q = scratch.counts.iter().map(|c| c * c).sum::<f64>();
            if scratch.counts.iter().filter(|&&c| c > 0.0).count() < 2 {
                return None;
            }
        }
        Response::Values(values) => {
            let mean = rows.iter().map(|&r| values[r]).sum::<f64>() / nf;
            scratch.shifted.clear();
            scratch.shifted.extend(rows.iter().map(|&r| values[r] - mean));
            if scratch.shifted.iter().all(|&v| v == 0.0) {
                return None;
            }
            let s: f64 = scratch.shifted.iter().sum();
            total_q = s * s;
        }
    }
    let parent = match response {
        Response::Classes { .. } => 1.0 - total_q / (nf * nf),
        Response::Values(_) => scratch.shifted.iter().map(|v| v * v).sum::<f64>() / nf - total_q / (nf * nf),
    };
    let tie_tol = 1e-12 * parent.abs().max(f64::MIN_POSITIVE);

    let mut best: Option<Split> = None;
    let mut sorted_candidates = candidates.to_vec();
    sorted_candidates.sort_unstable();
    sorted_candidates.dedup();

    let mut left_counts: Vec<f64> = Vec::new();
    for &f in &sorted_candidates {
        let col = x.column(f);
        scratch.pairs.clear();
        scratch
            .pairs
            .extend(rows.iter().enumerate().map(|(i, &r)| (col[r], i as u32)));
        scratch.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if scratch.pairs[0].0 == scratch.pairs[n - 1].0 {
            continue;
        }

        match response {
            Response::Classes { labels, n_classes } => {
                left_counts.clear();
                left_counts.resize(n_classes, 0.0);
                let mut left_q = 0.0;
                let mut right_q = total_q;
                for i in 0..n - 1 {
                    let (v, pos) = scratch.pairs[i];
                    let k = labels[rows[pos as usize]] as usize;
                    let l = left_counts[k];
                    let rc = scratch.counts[k] - l;
                    left_q += 2.0 * l + 1.0;
                    right_q -= 2.0 * rc - 1.0;
                    left_counts[k] = l + 1.0;
                    let next = scratch.pairs[i + 1].0;
                    let n_left = i + 1;
                    if v == next || n_left < min_leaf || n - n_left < min_leaf {
                        continue;
                    }
                    let nl = n_left as f64;
                    let nr = nf - nl;
                    let decrease = (left_q / nl + right_q / nr) / nf - total_q / (nf * nf);
                    consider(&mut best, f, v, next, decrease, tie_tol);
                }
            }
            Response::Values(_) => {
                let mut left_s = 0.0;
                let total_s: f64 = scratch.shifted.iter().sum();
                for i in 0..n - 1 {
                    let (v, pos) = scratch.pairs[i];
                    left_s += scratch.shifted[pos as usize];
                    let next = scratch.pairs[i + 1].0;
                    let n_left = i + 1;
                    if v == next || n_left < min_leaf || n - n_left < min_leaf {
                        continue;
                    }
                    let nl = n_left as f64;
                    let nr = nf - nl;
                    let right_s = total_s - left_s;
                    let decrease = (left_s * left_s / nl + right_s * right_s / nr) / nf - total_q / (nf * nf);
                    consider(&mut best, f, v, next, decrease, tie_tol);
                }
            }
        }
    }
    best.filter(|b| b.decrease > MIN_DECREASE)
}

#[inline]
fn consider(best: &mut Option<Split>, feature: usize, lo: f64, hi: f64, decrease: f64, tol: f64) {
    let better = match best {
        None => true,
        Some(b) => decrease > b.decrease + tol,
    };
    if better {
        *best = Some(Split {
            feature,
            threshold: midpoint(lo, hi),
            decrease,
        });
    }
}
