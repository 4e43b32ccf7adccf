//! CART trees and random-forest ensembles.
//!
//! Trees split numeric features at midpoints between consecutive distinct
//! values (`value <= threshold` goes left), using Gini impurity for
//! classification and population variance for regression. A forest grows
//! each tree on its own bootstrap sample with per-split feature subsampling;
//! every tree's RNG is seeded from `(seed, tree index)`, so results do not
//! depend on how trees are scheduled across threads.
//!
//! Feature importance is mean decrease in impurity: the node-share-weighted
//! impurity decrease of every split, summed per feature over all trees and
//! normalized to one.

mod split;
mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use split::{best_split, gini_impurity, variance_impurity, Response, Split, MIN_DECREASE};
pub use tree::{FlatTree, Tree, TreeNode};

use tree::{grow_tree, GrowParams};

/// Dense, fully observed feature matrix stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
}

impl DenseMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::invalid("columns differ in length"));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite (impute first)"));
        }
        Ok(DenseMatrix { n_rows, columns })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::invalid("rows differ in length"));
        }
        let columns = (0..n_cols).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        let mut m = Self::from_columns(columns)?;
        m.n_rows = rows.len();
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.columns[col]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        DenseMatrix {
            n_rows: rows.len(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Multiclass,
    Binary,
}

impl TaskKind {
    pub fn is_classification(self) -> bool {
        self != TaskKind::Regression
    }
}

/// Training labels.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Values(Vec<f64>),
    /// Labels plus the declared (sorted) class set they are drawn from.
    Classes {
        labels: Vec<u32>,
        classes: Vec<u32>,
    },
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Values(v) => v.len(),
            Target::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Target {
        match self {
            Target::Values(v) => Target::Values(rows.iter().map(|&r| v[r]).collect()),
            Target::Classes { labels, classes } => Target::Classes {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                classes: classes.clone(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Fraction(f64),
}

impl MaxFeatures {
    pub fn count(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Fraction(f) => (f * n_features as f64).floor() as usize,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    #[serde(default = "one")]
    pub min_samples_leaf: usize,
    #[serde(default = "yes")]
    pub bootstrap: bool,
    pub seed: u64,
    pub task: TaskKind,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ForestParams {
    pub fn new(task: TaskKind, n_estimators: usize, max_depth: usize, seed: u64) -> Self {
        ForestParams {
            n_estimators,
            max_depth,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            bootstrap: true,
            seed,
            task,
        }
    }

    /// Parameters under which a one-tree forest is a plain CART tree.
    pub fn single_tree(task: TaskKind, max_depth: usize, seed: u64) -> Self {
        ForestParams {
            n_estimators: 1,
            max_depth,
            max_features: MaxFeatures::All,
            min_samples_leaf: 1,
            bootstrap: false,
            seed,
            task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_estimators == 0 {
            errs.push("n_estimators must be >= 1".to_string());
        }
        if self.max_depth == 0 {
            errs.push("max_depth must be >= 1".to_string());
        }
        if self.min_samples_leaf == 0 {
            errs.push("min_samples_leaf must be >= 1".to_string());
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                errs.push(format!("max_features fraction {f} outside (0, 1]"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset_id: String,
    pub catalog_version: String,
    pub n_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prediction {
    Value(f64),
    Class(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Values(Vec<f64>),
    Classes(Vec<u32>),
}

pub trait Predictor: Send + Sync {
    fn predict_matrix(&self, x: &DenseMatrix) -> Result<Predictions>;
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ForestDoc", try_from = "ForestDoc")]
pub struct ForestModel {
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    /// Declared class ids, empty for regression.
    pub classes: Vec<u32>,
    pub trees: Vec<Tree>,
    pub importance: Vec<f64>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ForestDoc {
    version: u32,
    params: ForestParams,
    feature_names: Vec<String>,
    catalog_version: String,
    dataset_id: String,
    n_samples: usize,
    classes: Vec<u32>,
    importance: Vec<f64>,
    trees: Vec<FlatTree>,
}

impl From<ForestModel> for ForestDoc {
    fn from(m: ForestModel) -> Self {
        ForestDoc {
            version: MODEL_FORMAT_VERSION,
            trees: m.trees.iter().map(FlatTree::from).collect(),
            params: m.params,
            feature_names: m.feature_names,
            catalog_version: m.meta.catalog_version,
            dataset_id: m.meta.dataset_id,
            n_samples: m.meta.n_samples,
            classes: m.classes,
            importance: m.importance,
        }
    }
}

impl TryFrom<ForestDoc> for ForestModel {
    type Error = Error;

    fn try_from(doc: ForestDoc) -> Result<Self> {
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                doc.version
            )));
        }
        if doc.importance.len() != doc.feature_names.len() {
            return Err(Error::Incompatible(
                "importance length differs from feature count".into(),
            ));
        }
        let trees = doc.trees.into_iter().map(Tree::try_from).collect::<Result<Vec<_>>>()?;
        Ok(ForestModel {
            params: doc.params,
            feature_names: doc.feature_names,
            classes: doc.classes,
            trees,
            importance: doc.importance,
            meta: TrainingMeta {
                dataset_id: doc.dataset_id,
                catalog_version: doc.catalog_version,
                n_samples: doc.n_samples,
            },
        })
    }
}

/// Fits a random forest.
pub fn fit_forest(
    x: &DenseMatrix,
    target: &Target,
    feature_names: &[String],
    params: &ForestParams,
) -> Result<ForestModel> {
    params.validate()?;
    if x.n_rows() == 0 {
        return Err(Error::invalid("cannot fit a forest on an empty matrix"));
    }
    if target.len() != x.n_rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} rows",
            target.len(),
            x.n_rows()
        )));
    }
    if feature_names.len() != x.n_cols() {
        return Err(Error::invalid("feature name count differs from column count"));
    }

    // class ids -> dense indices
    let (class_index, classes): (Vec<u32>, Vec<u32>) = match (target, params.task) {
        (Target::Values(_), TaskKind::Regression) => (Vec::new(), Vec::new()),
        (Target::Classes { labels, classes }, task) if task.is_classification() => {
            let mut declared = classes.clone();
            declared.sort_unstable();
            declared.dedup();
            let idx = labels
                .iter()
                .map(|l| {
                    declared
                        .binary_search(l)
                        .map(|i| i as u32)
                        .map_err(|_| Error::invalid(format!("label {l} not in declared class set")))
                })
                .collect::<Result<Vec<u32>>>()?;
            let distinct = idx.iter().collect::<std::collections::BTreeSet<_>>().len();
            if distinct < 2 {
                log::warn!("single-class training data; the forest degenerates to a constant model");
            }
            (idx, declared)
        }
        _ => return Err(Error::invalid("labels do not match the task kind")),
    };
    let response = match target {
        Target::Values(v) => Response::Values(v),
        Target::Classes { .. } => Response::Classes {
            labels: &class_index,
            n_classes: classes.len(),
        },
    };

    let grow = GrowParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: params.max_features,
    };
    let n = x.n_rows();
    let trees: Vec<Tree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng_at(params.seed, &[t as u64]);
            let rows: Vec<usize> = if params.bootstrap {
                use rand::Rng as _;
                let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                rows.sort_unstable();
                rows
            } else {
                (0..n).collect()
            };
            grow_tree(x, response, rows, &grow, &mut rng)
        })
        .collect();

    let mut importance = vec![0.0; x.n_cols()];
    for t in &trees {
        for (acc, v) in importance.iter_mut().zip(&t.importance) {
            *acc += v;
        }
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        importance.iter_mut().for_each(|v| *v /= total);
    }

    Ok(ForestModel {
        params: params.clone(),
        feature_names: feature_names.to_vec(),
        classes,
        trees,
        importance,
        meta: TrainingMeta {
            n_samples: n,
            ..TrainingMeta::default()
        },
    })
}

fn argmax_lowest(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate().skip(1) {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

impl ForestModel {
    pub fn task(&self) -> TaskKind {
        self.params.task
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.feature_names.len() {
            return Err(Error::invalid(format!(
                "feature vector has {width} values, model expects {}",
                self.feature_names.len()
            )));
        }
        Ok(())
    }

    /// Mean of the per-tree leaf values: a class distribution or a 1-vector.
    fn aggregate(&self, leaf: impl Fn(&Tree) -> Vec<f64>) -> Vec<f64> {
        let width = self.classes.len().max(1);
        let mut acc = vec![0.0; width];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(leaf(t)) {
                *a += v;
            }
        }
        let k = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }

    fn decide(&self, agg: &[f64]) -> Prediction {
        if self.task().is_classification() {
            Prediction::Class(self.classes[argmax_lowest(agg)])
        } else {
            Prediction::Value(agg[0])
        }
    }

    /// Averaged class distribution over `self.classes`.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_width(row.len())?;
        if !self.task().is_classification() {
            return Err(Error::invalid("predict_proba on a regression forest"));
        }
        Ok(self.aggregate(|t| t.leaf_for_row(row).to_vec()))
    }

    pub fn predict(&self, row: &[f64]) -> Result<Prediction> {
        self.check_width(row.len())?;
        let agg = self.aggregate(|t| t.leaf_for_row(row).to_vec());
        Ok(self.decide(&agg))
    }

    pub fn predict_batch(&self, x: &DenseMatrix) -> Result<Predictions> {
        self.check_width(x.n_cols())?;
        let preds: Vec<Prediction> = (0..x.n_rows())
            .into_par_iter()
            .map(|r| self.decide(&self.aggregate(|t| t.leaf(x, r).to_vec())))
            .collect();
        Ok(collect_predictions(preds))
    }

    /// Normalized mean-decrease-in-impurity per feature.
    pub fn feature_importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn collect_predictions(preds: Vec<Prediction>) -> Predictions {
    match preds.first() {
        Some(Prediction::Class(_)) => Predictions::Classes(
            preds
                .into_iter()
                .map(|p| match p {
                    Prediction::Class(c) => c,
                    Prediction::Value(_) => unreachable!("mixed predictions"),
                })
                .collect(),
        ),
        _ => Predictions::Values(
            preds
                .into_iter()
                .map(|p| match p {
                    Prediction::Value(v) => v,
                    Prediction::Class(_) => unreachable!("mixed predictions"),
                })
                .collect(),
        ),
    }
}

impl Predictor for ForestModel {
    fn predict_matrix(&self, x: &DenseMatrix) -> Result<Predictions> {
        self.predict_batch(x)
    }
}

/// Constant predictor: training mean or most frequent class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineModel {
    Mean(f64),
    MostFrequent(u32),
}

impl BaselineModel {
    pub fn fit(target: &Target) -> Result<Self> {
        match target {
            Target::Values(v) if !v.is_empty() => Ok(BaselineModel::Mean(v.iter().sum::<f64>() / v.len() as f64)),
            Target::Classes { labels, .. } if !labels.is_empty() => {
                let mut counts = std::collections::BTreeMap::new();
                for l in labels {
                    *counts.entry(*l).or_insert(0usize) += 1;
                }
                // BTreeMap iterates ascending, so the first maximum is the lowest id
                let mut best = (0u32, 0usize);
                for (c, n) in counts {
                    if n > best.1 {
                        best = (c, n);
                    }
                }
                Ok(BaselineModel::MostFrequent(best.0))
            }
            _ => Err(Error::invalid("baseline needs at least one label")),
        }
    }

    pub fn predict(&self) -> Prediction {
        match *self {
            BaselineModel::Mean(m) => Prediction::Value(m),
            BaselineModel::MostFrequent(c) => Prediction::Class(c),
        }
    }
}

impl Predictor for BaselineModel {
    fn predict_matrix(&self, x: &DenseMatrix) -> Result<Predictions> {
        Ok(match *self {
            BaselineModel::Mean(m) => Predictions::Values(vec![m; x.n_rows()]),
            BaselineModel::MostFrequent(c) => Predictions::Classes(vec![c; x.n_rows()]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn leaf_model(task: TaskKind, classes: Vec<u32>, leaves: Vec<Vec<f64>>) -> ForestModel {
        ForestModel {
            params: ForestParams::new(task, leaves.len(), 1, 0),
            feature_names: names(1),
            classes,
            trees: leaves
                .into_iter()
                .map(|v| Tree {
                    nodes: vec![TreeNode::Leaf { value: v, samples: 1 }],
                    importance: vec![0.0],
                })
                .collect(),
            importance: vec![0.0],
            meta: TrainingMeta::default(),
        }
    }

    #[test]
    fn predict_examples() {
        let m = leaf_model(TaskKind::Multiclass, vec![1, 2], vec![vec![0.7, 0.3]]);
        assert_eq!(m.predict(&[0.0]).unwrap(), Prediction::Class(1));
        let m = leaf_model(TaskKind::Regression, vec![], vec![vec![2.0], vec![4.0]]);
        assert_eq!(m.predict(&[0.0]).unwrap(), Prediction::Value(3.0));
        let m = leaf_model(
            TaskKind::Multiclass,
            vec![1, 2, 3, 4, 5, 6],
            vec![vec![0.0, 0.5, 0.0, 0.0, 0.5, 0.0]],
        );
        assert_eq!(m.predict(&[0.0]).unwrap(), Prediction::Class(2));
        assert!(m.predict(&[0.0, 1.0]).is_err());
    }

    fn separable(n: usize, seed: u64) -> (DenseMatrix, Vec<u32>) {
        let mut rng = seed::rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = (i % 2) as u32;
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            // class 1 occupies a box disjoint from class 0's
            let shift = if class == 1 { 1.2 } else { 0.0 };
            rows.push(vec![a + shift, b + shift]);
            labels.push(class);
        }
        (DenseMatrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let (x, labels) = separable(200, 3);
        let target = Target::Classes {
            labels: labels.clone(),
            classes: vec![0, 1],
        };
        let params = ForestParams::new(TaskKind::Binary, 8, 4, 11);
        let model = fit_forest(&x, &target, &names(2), &params).unwrap();
        let Predictions::Classes(pred) = model.predict_batch(&x).unwrap() else {
            panic!()
        };
        assert_eq!(pred, labels);
        assert_eq!(model.trees.len(), 8);
        assert!((model.importance.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(model.trees.iter().all(|t| t.depth() <= 4));
    }

    #[test]
    fn fixed_seed_is_deterministic_across_thread_counts() {
        let (x, labels) = separable(150, 5);
        let target = Target::Classes {
            labels,
            classes: vec![0, 1],
        };
        let params = ForestParams::new(TaskKind::Binary, 16, 6, 99);
        let a = fit_forest(&x, &target, &names(2), &params).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fit_forest(&x, &target, &names(2), &params).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn regression_approximates_identity() {
        let mut rng = seed::rng(1);
        let train: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..100.0)).collect();
        let x = DenseMatrix::from_columns(vec![train.clone()]).unwrap();
        let params = ForestParams {
            max_features: MaxFeatures::All,
            ..ForestParams::new(TaskKind::Regression, 32, 16, 4)
        };
        let model = fit_forest(&x, &Target::Values(train), &names(1), &params).unwrap();
        let test: Vec<f64> = (0..200).map(|i| 0.5 + i as f64 * 0.495).collect();
        let tx = DenseMatrix::from_columns(vec![test.clone()]).unwrap();
        let Predictions::Values(pred) = model.predict_batch(&tx).unwrap() else {
            panic!()
        };
        let mean = test.iter().sum::<f64>() / test.len() as f64;
        let ss_tot: f64 = test.iter().map(|y| (y - mean).powi(2)).sum();
        let ss_res: f64 = test.iter().zip(&pred).map(|(y, p)| (y - p).powi(2)).sum();
        assert!(1.0 - ss_res / ss_tot >= 0.95);
    }

    #[test]
    fn single_feature_forest_importance() {
        let x = DenseMatrix::from_columns(vec![vec![0.0, 1.0, 2.0, 3.0], vec![5.0; 4]]).unwrap();
        let target = Target::Classes {
            labels: vec![0, 0, 1, 1],
            classes: vec![0, 1],
        };
        let model = fit_forest(&x, &target, &names(2), &ForestParams::new(TaskKind::Binary, 4, 3, 1)).unwrap();
        assert_eq!(model.importance, vec![1.0, 0.0]);
    }

    #[test]
    fn noise_feature_matters_less_than_signal() {
        let mut rng = seed::rng(8);
        for s in 0..3u64 {
            let (x, labels) = separable(200, 20 + s);
            let noise: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut cols: Vec<Vec<f64>> = (0..2).map(|c| x.column(c).to_vec()).collect();
            cols.push(noise);
            let x = DenseMatrix::from_columns(cols).unwrap();
            let target = Target::Classes {
                labels,
                classes: vec![0, 1],
            };
            let m = fit_forest(&x, &target, &names(3), &ForestParams::new(TaskKind::Binary, 16, 8, s)).unwrap();
            assert!(m.importance[2] < m.importance[0].max(m.importance[1]));
        }
    }

    #[test]
    fn single_class_input_degenerates() {
        let x = DenseMatrix::from_columns(vec![vec![0.0, 1.0, 2.0]]).unwrap();
        let target = Target::Classes {
            labels: vec![3, 3, 3],
            classes: vec![1, 2, 3, 4, 5, 6],
        };
        let m = fit_forest(
            &x,
            &target,
            &names(1),
            &ForestParams::new(TaskKind::Multiclass, 3, 4, 0),
        )
        .unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.importance, vec![0.0]);
        assert_eq!(m.predict(&[10.0]).unwrap(), Prediction::Class(3));
    }

    #[test]
    fn fit_rejects_bad_input() {
        let x = DenseMatrix::from_columns(vec![vec![]]).unwrap();
        let p = ForestParams::new(TaskKind::Regression, 1, 1, 0);
        assert!(fit_forest(&x, &Target::Values(vec![]), &names(1), &p).is_err());
        let x = DenseMatrix::from_columns(vec![vec![1.0]]).unwrap();
        let classes = Target::Classes {
            labels: vec![1],
            classes: vec![1, 2],
        };
        assert!(fit_forest(&x, &classes, &names(1), &p).is_err());
        let bad = ForestParams {
            n_estimators: 0,
            max_depth: 0,
            ..p
        };
        assert!(matches!(bad.validate(), Err(Error::Config(v)) if v.len() == 2));
        assert!(DenseMatrix::from_columns(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn baseline_examples() {
        let b = BaselineModel::fit(&Target::Values(vec![10.0, 20.0, 30.0])).unwrap();
        assert_eq!(b.predict(), Prediction::Value(20.0));
        let b = BaselineModel::fit(&Target::Classes {
            labels: vec![1, 1, 2],
            classes: vec![1, 2],
        })
        .unwrap();
        assert_eq!(b.predict(), Prediction::Class(1));
        let b = BaselineModel::fit(&Target::Classes {
            labels: vec![5, 2],
            classes: vec![2, 5],
        })
        .unwrap();
        assert_eq!(b.predict(), Prediction::Class(2));
        assert!(BaselineModel::fit(&Target::Values(vec![])).is_err());
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let (x, labels) = separable(80, 2);
        let target = Target::Classes {
            labels,
            classes: vec![0, 1],
        };
        let model = fit_forest(&x, &target, &names(2), &ForestParams::new(TaskKind::Binary, 5, 5, 3)).unwrap();
        let json = model.to_json().unwrap();
        assert!(json.contains("\"version\":1"));
        let back = ForestModel::from_json(&json).unwrap();
        assert_eq!(back, model);
        let tampered = json.replace("\"version\":1", "\"version\":99");
        assert!(ForestModel::from_json(&tampered).is_err());
    }

    fn small_matrix() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u32>)> {
        (2usize..30, 1usize..4).prop_flat_map(|(n, f)| {
            (
                proptest::collection::vec(proptest::collection::vec(0i32..6, f), n).prop_map(|rows| {
                    rows.into_iter()
                        .map(|r| r.into_iter().map(f64::from).collect())
                        .collect()
                }),
                proptest::collection::vec(0u32..3, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn one_tree_forest_is_plain_cart((rows, labels) in small_matrix(), depth in 1usize..6) {
            let x = DenseMatrix::from_rows(&rows).unwrap();
            let target = Target::Classes { labels, classes: vec![0, 1, 2] };
            let p = ForestParams::single_tree(TaskKind::Multiclass, depth, 1);
            let a = fit_forest(&x, &target, &names(x.n_cols()), &p).unwrap();
            let b = fit_forest(&x, &target, &names(x.n_cols()), &ForestParams { seed: 77, ..p.clone() }).unwrap();
            for r in 0..x.n_rows() {
                prop_assert_eq!(a.predict(&x.row(r)).unwrap(), b.predict(&x.row(r)).unwrap());
            }
            prop_assert_eq!(&a.trees, &b.trees);
        }

        #[test]
        fn deeper_trees_never_raise_leaf_impurity((rows, labels) in small_matrix()) {
            let x = DenseMatrix::from_rows(&rows).unwrap();
            let target = Target::Classes { labels: labels.clone(), classes: vec![0, 1, 2] };
            let weighted_leaf_gini = |depth: usize| {
                let m = fit_forest(&x, &target, &names(x.n_cols()), &ForestParams::single_tree(TaskKind::Multiclass, depth, 0)).unwrap();
                m.trees[0].nodes.iter().map(|n| match n {
                    TreeNode::Leaf { value, samples } => *samples as f64 * (1.0 - value.iter().map(|p| p * p).sum::<f64>()),
                    _ => 0.0,
                }).sum::<f64>()
            };
            let imps: Vec<f64> = (1..7).map(weighted_leaf_gini).collect();
            for w in imps.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
        }

        #[test]
        fn unused_features_have_zero_importance((rows, labels) in small_matrix()) {
            let x = DenseMatrix::from_rows(&rows).unwrap();
            let target = Target::Classes { labels, classes: vec![0, 1, 2] };
            let m = fit_forest(&x, &target, &names(x.n_cols()), &ForestParams::new(TaskKind::Multiclass, 4, 3, 5)).unwrap();
            let used: std::collections::HashSet<usize> = m.trees.iter().flat_map(|t| t.split_features()).collect();
            for (f, imp) in m.importance.iter().enumerate() {
                if !used.contains(&f) {
                    prop_assert_eq!(*imp, 0.0);
                }
            }
            let total: f64 = m.importance.iter().sum();
            prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn argmax_ignores_positive_scaling(dist in proptest::collection::vec(0.0f64..1.0, 1..7), scale in 0.01f64..100.0) {
            let scaled: Vec<f64> = dist.iter().map(|p| p * scale).collect();
            // exact ties may resolve differently only if scaling breaks them, which multiplication cannot
            prop_assert_eq!(argmax_lowest(&dist), argmax_lowest(&scaled));
        }
    }
}
