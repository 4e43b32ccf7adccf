use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of determination. With zero target variance the score is 1
/// for an exact match and 0 otherwise.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "r2: {} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::invalid("r2 of empty inputs"));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: u32,
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision or recall was undefined (0/0) and reported as 0.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: Vec<ClassScore>,
}

/// Unweighted mean of per-class F1 over the declared `classes`.
pub fn macro_f1(y_true: &[u32], y_pred: &[u32], classes: &[u32]) -> Result<F1Report> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid("macro_f1: length mismatch"));
    }
    if y_true.is_empty() || classes.is_empty() {
        return Err(Error::invalid("macro_f1 of empty inputs"));
    }
    let idx = |c: u32| {
        classes
            .iter()
            .position(|&k| k == c)
            .ok_or_else(|| Error::invalid(format!("label {c} outside declared classes")))
    };
    let k = classes.len();
    let mut tp = vec![0usize; k];
    let mut support = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let (ti, pi) = (idx(t)?, idx(p)?);
        support[ti] += 1;
        predicted[pi] += 1;
        if ti == pi {
            tp[ti] += 1;
        }
    }
    let per_class: Vec<ClassScore> = (0..k)
        .map(|i| {
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = ratio(tp[i], predicted[i]);
            let recall = ratio(tp[i], support[i]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScore {
                class: classes[i],
                support: support[i],
                predicted: predicted[i],
                precision,
                recall,
                f1,
                flagged: predicted[i] == 0 || support[i] == 0,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
    Ok(F1Report { macro_f1, per_class })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; `None` when either input has no rank variance.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid("spearman: length mismatch"));
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman needs at least two points"));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Pairwise Spearman correlations between importance vectors.
pub fn importance_correlation(vectors: &[&[f64]]) -> Result<Vec<Vec<Option<f64>>>> {
    let n = vectors.len();
    let mut out = vec![vec![None; n]; n];
    for i in 0..n {
        out[i][i] = Some(1.0);
        for j in i + 1..n {
            let rho = spearman_rho(vectors[i], vectors[j])?;
            out[i][j] = rho;
            out[j][i] = rho;
        }
    }
    Ok(out)
}

/// Per-fold scores with their mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub metric: String,
    pub folds: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

impl ScoreSummary {
    pub fn from_scores(metric: &str, folds: Vec<f64>) -> Self {
        let n = folds.len().max(1) as f64;
        let mean = folds.iter().sum::<f64>() / n;
        let var = folds.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        ScoreSummary {
            metric: metric.to_string(),
            folds,
            mean,
            stddev: var.sqrt(),
        }
    }
}
