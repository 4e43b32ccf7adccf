use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

use super::split::{best_split_with, Response, SplitScratch, MIN_DECREASE};
use super::{DenseMatrix, MaxFeatures};

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    /// Rows with `value <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Class distribution (classification) or a single mean (regression).
        value: Vec<f64>,
        samples: usize,
    },
}

/// A fitted CART tree stored as a node arena; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    /// Per-feature impurity decrease weighted by node share of the root sample.
    pub importance: Vec<f64>,
}

impl Tree {
    pub fn leaf<'a>(&'a self, x: &DenseMatrix, row: usize) -> &'a [f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x.get(row, *feature) <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                TreeNode::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn leaf_for_row<'a>(&'a self, row: &[f64]) -> &'a [f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }
}

/// Flattened, serializable form of a [`Tree`]. Leaves have `feature = -1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatTree {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<i64>,
    pub right: Vec<i64>,
    pub samples: Vec<u64>,
    pub value: Vec<Vec<f64>>,
    pub importance: Vec<f64>,
}

impl From<&Tree> for FlatTree {
    fn from(tree: &Tree) -> Self {
        let n = tree.nodes.len();
        let mut flat = FlatTree {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            samples: Vec::with_capacity(n),
            value: Vec::with_capacity(n),
            importance: tree.importance.clone(),
        };
        for node in &tree.nodes {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    flat.feature.push(*feature as i64);
                    flat.threshold.push(*threshold);
                    flat.left.push(*left as i64);
                    flat.right.push(*right as i64);
                    flat.samples.push(0);
                    flat.value.push(Vec::new());
                }
                TreeNode::Leaf { value, samples } => {
                    flat.feature.push(-1);
                    flat.threshold.push(0.0);
                    flat.left.push(-1);
                    flat.right.push(-1);
                    flat.samples.push(*samples as u64);
                    flat.value.push(value.clone());
                }
            }
        }
        flat
    }
}

impl TryFrom<FlatTree> for Tree {
    type Error = Error;

    fn try_from(flat: FlatTree) -> Result<Self> {
        let n = flat.feature.len();
        if [
            flat.threshold.len(),
            flat.left.len(),
            flat.right.len(),
            flat.samples.len(),
            flat.value.len(),
        ]
        .iter()
        .any(|&l| l != n)
            || n == 0
        {
            return Err(Error::Incompatible(
                "flattened tree arrays have inconsistent lengths".into(),
            ));
        }
        let n_features = flat.importance.len();
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            if flat.feature[i] < 0 {
                nodes.push(TreeNode::Leaf {
                    value: flat.value[i].clone(),
                    samples: flat.samples[i] as usize,
                });
            } else {
                let (f, l, r) = (flat.feature[i] as usize, flat.left[i], flat.right[i]);
                // children always follow their parent in the arena
                if f >= n_features || l <= i as i64 || r <= i as i64 || l as usize >= n || r as usize >= n {
                    return Err(Error::Incompatible(format!("malformed split node {i}")));
                }
                nodes.push(TreeNode::Split {
                    feature: f,
                    threshold: flat.threshold[i],
                    left: l as usize,
                    right: r as usize,
                });
            }
        }
        Ok(Tree {
            nodes,
            importance: flat.importance,
        })
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

/// Grows one tree on `rows` (which may repeat rows, e.g. a bootstrap sample).
pub(crate) fn grow_tree(
    x: &DenseMatrix,
    response: Response<'_>,
    mut rows: Vec<usize>,
    params: &GrowParams,
    rng: &mut Rng,
) -> Tree {
    let n_features = x.n_cols();
    let mtry = params.max_features.count(n_features);
    let root_n = rows.len() as f64;
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut importance = vec![0.0; n_features];
    let mut scratch = SplitScratch::default();
    let mut feature_pool: Vec<usize> = (0..n_features).collect();
    let mut spill: Vec<usize> = Vec::new();

    // (node slot, start, end, depth)
    nodes.push(placeholder());
    let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
    while let Some((slot, start, end, depth)) = stack.pop() {
        let node_rows = &rows[start..end];
        let split = if depth < params.max_depth && n_features > 0 {
            let candidates = sample_features(&mut feature_pool, mtry, rng);
            best_split_with(
                x,
                response,
                node_rows,
                &candidates,
                params.min_samples_leaf,
                &mut scratch,
            )
            .filter(|s| s.decrease > MIN_DECREASE)
        } else {
            None
        };
        match split {
            None => nodes[slot] = make_leaf(response, node_rows),
            Some(s) => {
                let col = x.column(s.feature);
                let mid = stable_partition(&mut rows[start..end], &mut spill, |r| col[r] <= s.threshold);
                importance[s.feature] += (end - start) as f64 / root_n * s.decrease;
                let left = nodes.len();
                nodes.push(placeholder());
                let right = nodes.len();
                nodes.push(placeholder());
                nodes[slot] = TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
                stack.push((right, start + mid, end, depth + 1));
                stack.push((left, start, start + mid, depth + 1));
            }
        }
    }
    Tree { nodes, importance }
}

/// Moves rows matching `pred` to the front, preserving relative order on both sides.
fn stable_partition(slice: &mut [usize], spill: &mut Vec<usize>, pred: impl Fn(usize) -> bool) -> usize {
    spill.clear();
    let mut mid = 0;
    for i in 0..slice.len() {
        let r = slice[i];
        if pred(r) {
            slice[mid] = r;
            mid += 1;
        } else {
            spill.push(r);
        }
    }
    slice[mid..].copy_from_slice(spill);
    mid
}

fn placeholder() -> TreeNode {
    TreeNode::Leaf {
        value: Vec::new(),
        samples: 0,
    }
}

fn sample_features(pool: &mut [usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = pool.len();
    if k >= n {
        let mut all: Vec<usize> = (0..n).collect();
        all.sort_unstable();
        return all;
    }
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

fn make_leaf(response: Response<'_>, rows: &[usize]) -> TreeNode {
    let n = rows.len();
    let value = match response {
        Response::Classes { labels, n_classes } => {
            let mut dist = vec![0.0; n_classes];
            for &r in rows {
                dist[labels[r] as usize] += 1.0;
            }
            if n > 0 {
                dist.iter_mut().for_each(|d| *d /= n as f64);
            }
            dist
        }
        Response::Values(values) => {
            let mean = if n > 0 {
                rows.iter().map(|&r| values[r]).sum::<f64>() / n as f64
            } else {
                0.0
            };
            vec![mean]
        }
    };
    TreeNode::Leaf { value, samples: n }
}
