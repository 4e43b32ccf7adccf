use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{BinaryWindow, LifetimeLabel, NUM_CLASSES};
use crate::features::{FeatureMatrix, Imputer, Subset};
use crate::forest::{
    fit_forest, BaselineModel, DenseMatrix, ForestModel, ForestParams, MaxFeatures, Predictions, Predictor, Target,
    TaskKind,
};
use crate::seed;

use super::metrics::{macro_f1, r2_score, ScoreSummary};

/// What a model predicts from a user's features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Lifetime in minutes.
    Regression,
    /// Six lifetime classes.
    Multiclass,
    /// Whether the lifetime exceeds the window.
    Binary(BinaryWindow),
}

impl Task {
    pub fn kind(self) -> TaskKind {
        match self {
            Task::Regression => TaskKind::Regression,
            Task::Multiclass => TaskKind::Multiclass,
            Task::Binary(_) => TaskKind::Binary,
        }
    }

    pub fn id(self) -> String {
        match self {
            Task::Regression => "reg".into(),
            Task::Multiclass => "clf".into(),
            Task::Binary(w) => format!("binary-{}", w.id()),
        }
    }

    pub fn metric(self) -> &'static str {
        match self {
            Task::Regression => "r2",
            _ => "macro_f1",
        }
    }

    pub fn classes(self) -> Vec<u32> {
        match self {
            Task::Regression => Vec::new(),
            Task::Multiclass => (1..=NUM_CLASSES).collect(),
            Task::Binary(_) => vec![0, 1],
        }
    }

    pub fn label_of(self, label: &LifetimeLabel) -> f64 {
        match self {
            Task::Regression => label.lifetime_minutes as f64,
            Task::Multiclass => label.class_id as f64,
            Task::Binary(w) => u32::from(label.flag(w)) as f64,
        }
    }

    pub fn target(self, labels: &[LifetimeLabel]) -> Target {
        match self {
            Task::Regression => Target::Values(labels.iter().map(|l| self.label_of(l)).collect()),
            _ => Target::Classes {
                labels: labels.iter().map(|l| self.label_of(l) as u32).collect(),
                classes: self.classes(),
            },
        }
    }

    /// R² or macro-F1 of `pred` against `truth`.
    pub fn score(self, truth: &Target, pred: &Predictions) -> Result<f64> {
        match (truth, pred) {
            (Target::Values(t), Predictions::Values(p)) => r2_score(t, p),
            (Target::Classes { labels, classes }, Predictions::Classes(p)) => {
                Ok(macro_f1(labels, p, classes)?.macro_f1)
            }
            _ => Err(Error::invalid("prediction kind does not match the task")),
        }
    }
}

/// Row-to-fold assignment for k-fold cross-validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

/// Seeded shuffle cut into `k` contiguous chunks; the first `n % k` folds
/// get one extra row.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} rows cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut assignments = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &order[pos..pos + size] {
            assignments[row] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan { k, seed, assignments })
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&r| self.assignments[r] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&r| self.assignments[r] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Imputed dense copy of `rows`.
pub fn dense_rows(matrix: &FeatureMatrix, imputer: &Imputer, rows: &[usize]) -> Result<DenseMatrix> {
    imputer.check_columns(matrix)?;
    let columns = (0..matrix.n_cols())
        .map(|c| rows.iter().map(|&r| imputer.value(matrix, r, c)).collect())
        .collect();
    DenseMatrix::from_columns(columns)
}

fn labels_at(matrix: &FeatureMatrix, rows: &[usize]) -> Vec<LifetimeLabel> {
    rows.iter().map(|&r| matrix.labels[r].clone()).collect()
}

/// Either a random forest or the constant baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Forest(ForestParams),
    Baseline,
}

/// Everything fitted for one fold.
pub struct FoldFit {
    pub imputer: Imputer,
    pub model: Box<dyn Predictor>,
    pub forest: Option<ForestModel>,
    pub test_rows: Vec<usize>,
}

/// Fits the imputer and model on the training partition of `fold`. The
/// forest seed is derived from the learner seed and the fold index.
pub fn fit_fold(
    matrix: &FeatureMatrix,
    task: Task,
    learner: &Learner,
    plan: &FoldPlan,
    fold: usize,
) -> Result<FoldFit> {
    if plan.assignments.len() != matrix.n_rows() {
        return Err(Error::invalid("fold plan does not match matrix rows"));
    }
    let train = plan.train_rows(fold);
    let imputer = Imputer::fit(matrix, &train)?;
    let target = task.target(&labels_at(matrix, &train));
    let (model, forest): (Box<dyn Predictor>, _) = match learner {
        Learner::Baseline => (Box::new(BaselineModel::fit(&target)?), None),
        Learner::Forest(p) => {
            let params = ForestParams {
                task: task.kind(),
                seed: seed::derive(p.seed, &[fold as u64]),
                ..p.clone()
            };
            let x = dense_rows(matrix, &imputer, &train)?;
            let forest = fit_forest(&x, &target, &matrix.columns, &params)?;
            (Box::new(forest.clone()), Some(forest))
        }
    };
    Ok(FoldFit {
        imputer,
        model,
        forest,
        test_rows: plan.test_rows(fold),
    })
}

impl FoldFit {
    pub fn score(&self, matrix: &FeatureMatrix, task: Task) -> Result<f64> {
        self.score_rows(matrix, task, &self.test_rows)
    }

    /// Scores a subset of this fold's test rows.
    pub fn score_rows(&self, matrix: &FeatureMatrix, task: Task, rows: &[usize]) -> Result<f64> {
        let x = dense_rows(matrix, &self.imputer, rows)?;
        let pred = self.model.predict_matrix(&x)?;
        task.score(&task.target(&labels_at(matrix, rows)), &pred)
    }
}

/// Per-fold test scores; imputation is refit inside every fold.
pub fn cross_validate(matrix: &FeatureMatrix, task: Task, learner: &Learner, plan: &FoldPlan) -> Result<ScoreSummary> {
    let scores = (0..plan.k)
        .into_par_iter()
        .map(|f| fit_fold(matrix, task, learner, plan, f)?.score(matrix, task))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScoreSummary::from_scores(task.metric(), scores))
}

/// Cross-validates on the whole matrix but scores each fold separately on
/// every community's share of the held-out rows.
pub fn cross_validate_by_community(
    matrix: &FeatureMatrix,
    task: Task,
    learner: &Learner,
    plan: &FoldPlan,
) -> Result<BTreeMap<String, ScoreSummary>> {
    let ids = matrix.community_ids();
    let per_fold = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let fit = fit_fold(matrix, task, learner, plan, f)?;
            ids.iter()
                .map(|c| {
                    let rows: Vec<usize> = fit
                        .test_rows
                        .iter()
                        .copied()
                        .filter(|&r| matrix.communities[r] == *c)
                        .collect();
                    if rows.is_empty() {
                        Ok(None)
                    } else {
                        fit.score_rows(matrix, task, &rows).map(Some)
                    }
                })
                .collect::<Result<Vec<Option<f64>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let scores = per_fold.iter().filter_map(|f| f[i]).collect();
            (c.clone(), ScoreSummary::from_scores(task.metric(), scores))
        })
        .collect())
}

/// Hyperparameter grid; every combination becomes one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    #[serde(default = "default_max_features")]
    pub max_features: Vec<MaxFeatures>,
    #[serde(default = "default_min_samples_leaf")]
    pub min_samples_leaf: Vec<usize>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: Vec<bool>,
}

fn default_max_features() -> Vec<MaxFeatures> {
    vec![MaxFeatures::Sqrt]
}

fn default_min_samples_leaf() -> Vec<usize> {
    vec![1]
}

fn default_bootstrap() -> Vec<bool> {
    vec![true]
}

impl GridSpec {
    pub fn expand(&self, task: Task, seed: u64) -> Result<Vec<ForestParams>> {
        let mut out = Vec::new();
        for &n in &self.n_estimators {
            for &d in &self.max_depth {
                for &mf in &self.max_features {
                    for &leaf in &self.min_samples_leaf {
                        for &b in &self.bootstrap {
                            let p = ForestParams {
                                n_estimators: n,
                                max_depth: d,
                                max_features: mf,
                                min_samples_leaf: leaf,
                                bootstrap: b,
                                seed,
                                task: task.kind(),
                            };
                            p.validate()?;
                            out.push(p);
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Config(vec!["grid has no points".into()]));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub params: ForestParams,
    pub summary: ScoreSummary,
}

fn canonical_key(p: &ForestParams) -> String {
    serde_json::to_string(p).unwrap_or_default()
}

/// Best first: higher mean, then fewer estimators, then shallower trees.
pub fn rank_entries(entries: &mut [GridEntry]) {
    entries.sort_by(|a, b| {
        b.summary
            .mean
            .total_cmp(&a.summary.mean)
            .then(a.params.n_estimators.cmp(&b.params.n_estimators))
            .then(a.params.max_depth.cmp(&b.params.max_depth))
            .then_with(|| canonical_key(&a.params).cmp(&canonical_key(&b.params)))
    });
}

/// Cross-validates every grid point on the same fold plan and ranks them.
pub fn grid_search(
    matrix: &FeatureMatrix,
    task: Task,
    grid: &[ForestParams],
    plan: &FoldPlan,
) -> Result<Vec<GridEntry>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    let mut entries = grid
        .iter()
        .map(|p| {
            Ok(GridEntry {
                params: p.clone(),
                summary: cross_validate(matrix, task, &Learner::Forest(p.clone()), plan)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_entries(&mut entries);
    Ok(entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: Subset,
    pub n_features: usize,
    pub summary: ScoreSummary,
}

/// One cross-validation per feature subset with unchanged labels and folds.
pub fn feature_subset_sweep(
    matrix: &FeatureMatrix,
    task: Task,
    subsets: &[Subset],
    learner: &Learner,
    plan: &FoldPlan,
) -> Result<Vec<SubsetScore>> {
    subsets
        .iter()
        .map(|&s| {
            let m = matrix.select_subset(s)?;
            Ok(SubsetScore {
                subset: s,
                n_features: m.n_cols(),
                summary: cross_validate(&m, task, learner, plan)?,
            })
        })
        .collect()
}

/// A trained forest with the imputer fitted on its training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub task: Task,
    pub imputer: Imputer,
    pub forest: ForestModel,
}

impl ModelArtifact {
    /// Trains on every row of `matrix`.
    pub fn train(matrix: &FeatureMatrix, task: Task, params: &ForestParams, dataset_id: &str) -> Result<Self> {
        let rows: Vec<usize> = (0..matrix.n_rows()).collect();
        let imputer = Imputer::fit(matrix, &rows)?;
        let x = dense_rows(matrix, &imputer, &rows)?;
        let params = ForestParams {
            task: task.kind(),
            ..params.clone()
        };
        let mut forest = fit_forest(&x, &task.target(&matrix.labels), &matrix.columns, &params)?;
        forest.meta.dataset_id = dataset_id.to_string();
        forest.meta.catalog_version = matrix.catalog_version.clone();
        Ok(ModelArtifact { task, imputer, forest })
    }

    pub fn check(&self, matrix: &FeatureMatrix) -> Result<()> {
        if self.forest.meta.catalog_version != matrix.catalog_version {
            return Err(Error::CatalogMismatch {
                expected: self.forest.meta.catalog_version.clone(),
                found: matrix.catalog_version.clone(),
            });
        }
        if self.forest.feature_names != matrix.columns {
            return Err(Error::Incompatible("model features differ from matrix columns".into()));
        }
        Ok(())
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Predictions> {
        self.check(matrix)?;
        let rows: Vec<usize> = (0..matrix.n_rows()).collect();
        self.forest.predict_batch(&dense_rows(matrix, &self.imputer, &rows)?)
    }

    pub fn score(&self, matrix: &FeatureMatrix) -> Result<f64> {
        let pred = self.predict(matrix)?;
        self.task.score(&self.task.target(&matrix.labels), &pred)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossApplyMatrix {
    pub metric: String,
    pub ids: Vec<String>,
    /// `scores[model][dataset]`; the diagonal holds the model's own CV mean.
    pub scores: Vec<Vec<f64>>,
}

/// Applies each model to every other dataset; `diagonal[i]` is dataset i's
/// cross-validation mean.
pub fn cross_apply(
    ids: &[String],
    models: &[ModelArtifact],
    datasets: &[FeatureMatrix],
    diagonal: &[f64],
) -> Result<CrossApplyMatrix> {
    let n = ids.len();
    if models.len() != n || datasets.len() != n || diagonal.len() != n {
        return Err(Error::invalid("cross-apply inputs differ in length"));
    }
    let task = models
        .first()
        .map(|m| m.task)
        .ok_or_else(|| Error::invalid("no models"))?;
    for d in datasets {
        datasets[0].ensure_same_catalog(d)?;
    }
    let scores = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Ok(diagonal[i])
                    } else {
                        models[i].score(&datasets[j])
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossApplyMatrix {
        metric: task.metric().to_string(),
        ids: ids.to_vec(),
        scores,
    })
}

/// Seeded uniform subset of `n` rows, kept in original order.
pub fn downsample(matrix: &FeatureMatrix, n: usize, seed: u64) -> Result<FeatureMatrix> {
    if n > matrix.n_rows() {
        return Err(Error::invalid(format!("cannot draw {n} rows from {}", matrix.n_rows())));
    }
    let mut rows = rand::seq::index::sample(&mut seed::rng(seed), matrix.n_rows(), n).into_vec();
    rows.sort_unstable();
    Ok(matrix.select_rows(&rows))
}

/// Copy of `matrix` with labels permuted across rows; a control that keeps
/// the features but destroys their relation to the labels.
pub fn shuffle_labels(matrix: &FeatureMatrix, seed: u64) -> FeatureMatrix {
    let mut out = matrix.clone();
    out.labels.shuffle(&mut seed::rng(seed));
    for (l, id) in out.labels.iter_mut().zip(&out.user_ids) {
        l.user_id = id.clone();
    }
    out
}
