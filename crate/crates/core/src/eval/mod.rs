//! Experiment protocol: k-fold cross-validation, grid search, subset
//! sweeps, cross-community application, importance correlation and
//! quantile bands, plus the report format they are written in.

mod bands;
mod cv;
mod metrics;
pub mod report;

pub use bands::{
    all_quantile_bands, band_bucket, percentile, quantile_bands, BandBucket, QuantileBands, BAND_BUCKETS, DECILES,
    MIN_BUCKET_USERS,
};
pub use cv::{
    cross_apply, cross_validate, cross_validate_by_community, dense_rows, downsample, feature_subset_sweep, fit_fold,
    grid_search, kfold_split, rank_entries, shuffle_labels, CrossApplyMatrix, FoldFit, FoldPlan, GridEntry, GridSpec,
    Learner, ModelArtifact, SubsetScore, Task,
};
pub use metrics::{
    average_ranks, importance_correlation, macro_f1, r2_score, spearman_rho, ClassScore, F1Report, ScoreSummary,
};
