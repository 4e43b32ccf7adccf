//! Exhaustive split search used as an oracle for `best_split`.

use lifespan_core::forest::{best_split, DenseMatrix, Response};

/// Weighted child impurity computed the slow way, straight from definitions.
pub fn node_impurity(ys: &[f64], classification: bool) -> f64 {
    let n = ys.len() as f64;
    if classification {
        let mut labels: Vec<f64> = ys.to_vec();
        labels.sort_by(f64::total_cmp);
        labels.dedup();
        1.0 - labels
            .iter()
            .map(|l| {
                let p = ys.iter().filter(|y| *y == l).count() as f64 / n;
                p * p
            })
            .sum::<f64>()
    } else {
        let mean = ys.iter().sum::<f64>() / n;
        ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n
    }
}

/// Every (feature, midpoint) pair with its impurity decrease.
pub fn all_splits(cols: &[Vec<f64>], ys: &[f64], classification: bool) -> Vec<(usize, f64, f64)> {
    let n = ys.len() as f64;
    let parent = node_impurity(ys, classification);
    let mut out = Vec::new();
    for (f, col) in cols.iter().enumerate() {
        let mut distinct = col.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for w in distinct.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<f64> = (0..ys.len()).filter(|&i| col[i] <= t).map(|i| ys[i]).collect();
            let right: Vec<f64> = (0..ys.len()).filter(|&i| col[i] > t).map(|i| ys[i]).collect();
            let child = left.len() as f64 / n * node_impurity(&left, classification)
                + right.len() as f64 / n * node_impurity(&right, classification);
            out.push((f, t, parent - child));
        }
    }
    out
}

/// Compares `best_split` on all rows and features against the exhaustive
/// search. Returns a description of the disagreement, if any.
pub fn disagreement(cols: &[Vec<f64>], ys: &[f64], response: Response<'_>, classification: bool) -> Option<String> {
    let x = DenseMatrix::from_columns(cols.to_vec()).unwrap();
    let rows: Vec<usize> = (0..ys.len()).collect();
    let candidates: Vec<usize> = (0..cols.len()).collect();
    let ours = best_split(&x, response, &rows, &candidates, 1);
    let splits = all_splits(cols, ys, classification);
    let best = splits.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    match ours {
        None if splits.is_empty() || best <= 1e-12 + 1e-9 => None,
        None => Some(format!("no split found, oracle decrease {best}")),
        Some(s) => {
            if (s.decrease - best).abs() >= 1e-9 {
                return Some(format!("decrease {} vs oracle {}", s.decrease, best));
            }
            // first pair (lowest feature, then lowest threshold) within tolerance of the best
            let expected = splits.iter().find(|c| c.2 >= best - 1e-9).unwrap();
            let clear_winner = splits
                .iter()
                .filter(|c| (c.0, c.1) != (expected.0, expected.1))
                .all(|c| c.2 < best - 1e-9);
            let ok = if clear_winner {
                (s.feature, s.threshold) == (expected.0, expected.1)
            } else {
                splits
                    .iter()
                    .any(|c| (c.0, c.1) == (s.feature, s.threshold) && c.2 >= best - 1e-9)
            };
            (!ok).then(|| {
                format!(
                    "split ({}, {}) vs oracle ({}, {})",
                    s.feature, s.threshold, expected.0, expected.1
                )
            })
        }
    }
}
