use serde::{Deserialize, Serialize};

use crate::events::{MINUTES_PER_DAY, MINUTES_PER_MONTH};
use crate::features::FeatureMatrix;

/// Lifetime buckets for band tables; upper bounds are inclusive. These
/// differ from the six lifetime classes.
pub const BAND_BUCKETS: [(&str, Option<i64>); 7] = [
    ("1d", Some(MINUTES_PER_DAY)),
    ("3d", Some(3 * MINUTES_PER_DAY)),
    ("1w", Some(7 * MINUTES_PER_DAY)),
    ("2w", Some(14 * MINUTES_PER_DAY)),
    ("1m", Some(MINUTES_PER_MONTH)),
    ("3m", Some(3 * MINUTES_PER_MONTH)),
    ("beyond", None),
];

/// Buckets with fewer users are marked low-confidence.
pub const MIN_BUCKET_USERS: usize = 10;

pub const DECILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub fn band_bucket(lifetime_minutes: i64) -> usize {
    BAND_BUCKETS
        .iter()
        .position(|(_, hi)| hi.is_none_or(|h| lifetime_minutes <= h))
        .expect("last bucket is unbounded")
}

/// Linear-interpolated percentile of a sorted, non-empty slice; `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandBucket {
    pub bucket: String,
    pub users: usize,
    /// Deciles 10%..90% of the scaled values; empty when the bucket is empty.
    pub quantiles: Vec<f64>,
    pub low_confidence: bool,
}

impl BandBucket {
    pub fn median(&self) -> Option<f64> {
        self.quantiles.get(4).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileBands {
    pub feature: String,
    /// Raw-value trimming bounds (1st and 99th percentile).
    pub trim_low: Option<f64>,
    pub trim_high: Option<f64>,
    /// Every kept value was equal, so scaling degenerated to 0.
    pub flat: bool,
    pub buckets: Vec<BandBucket>,
}

/// Per-feature decile bands by lifetime bucket: observed values outside the
/// 1st..99th percentile are dropped, the rest min-max scaled to [0, 1].
pub fn quantile_bands(matrix: &FeatureMatrix, feature: usize) -> QuantileBands {
    let observed: Vec<(f64, i64)> = (0..matrix.n_rows())
        .filter_map(|r| matrix.get(r, feature).map(|v| (v, matrix.labels[r].lifetime_minutes)))
        .collect();
    let name = matrix.columns[feature].clone();
    let mut per_bucket: Vec<Vec<f64>> = vec![Vec::new(); BAND_BUCKETS.len()];
    let (mut trim_low, mut trim_high, mut flat) = (None, None, false);
    if !observed.is_empty() {
        let mut sorted: Vec<f64> = observed.iter().map(|o| o.0).collect();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (percentile(&sorted, 0.01), percentile(&sorted, 0.99));
        trim_low = Some(lo);
        trim_high = Some(hi);
        let kept: Vec<(f64, i64)> = observed.into_iter().filter(|o| o.0 >= lo && o.0 <= hi).collect();
        let min = kept.iter().map(|k| k.0).fold(f64::INFINITY, f64::min);
        let max = kept.iter().map(|k| k.0).fold(f64::NEG_INFINITY, f64::max);
        flat = max <= min;
        for (v, life) in kept {
            let scaled = if flat {
                0.0
            } else {
                ((v - min) / (max - min)).clamp(0.0, 1.0)
            };
            per_bucket[band_bucket(life)].push(scaled);
        }
    }
    let buckets = BAND_BUCKETS
        .iter()
        .zip(per_bucket)
        .map(|((id, _), mut vals)| {
            vals.sort_by(f64::total_cmp);
            BandBucket {
                bucket: id.to_string(),
                users: vals.len(),
                quantiles: if vals.is_empty() {
                    Vec::new()
                } else {
                    DECILES.iter().map(|&q| percentile(&vals, q)).collect()
                },
                low_confidence: vals.len() < MIN_BUCKET_USERS,
            }
        })
        .collect();
    QuantileBands {
        feature: name,
        trim_low,
        trim_high,
        flat,
        buckets,
    }
}

pub fn all_quantile_bands(matrix: &FeatureMatrix) -> Vec<QuantileBands> {
    (0..matrix.n_cols()).map(|c| quantile_bands(matrix, c)).collect()
}
