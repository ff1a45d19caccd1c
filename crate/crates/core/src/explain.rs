//! One-vs-rest decision trees that describe clusters in original features.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterResult;
use crate::data::Dataset;
use crate::error::ExplainError;

pub const DEFAULT_MAX_DEPTH: usize = 3;
pub const MIN_LEAF: usize = 3;
pub const TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        feature_name: String,
        threshold: f64,
        /// Gini decrease weighted by the node's share of the training set.
        decrease: f64,
        /// Samples with `value <= threshold`.
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        samples: usize,
        members: usize,
        /// Fraction of samples in the leaf that belong to the cluster.
        member_fraction: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> bool {
        match self {
            TreeNode::Leaf { member_fraction, .. } => *member_fraction > 0.5,
            TreeNode::Split { feature, threshold, left, right, .. } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// All `(feature, threshold)` splits in pre-order.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let TreeNode::Split { feature, threshold, .. } = n {
                out.push((*feature, *threshold));
            }
        });
        out
    }

    fn walk(&self, f: &mut impl FnMut(&TreeNode)) {
        f(self);
        if let TreeNode::Split { left, right, .. } = self {
            left.walk(f);
            right.walk(f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    AtOrBelow,
}

/// The strongest split on one feature, phrased toward the cluster side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRule {
    pub feature: usize,
    pub feature_name: String,
    pub importance: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub cluster_id: i64,
    pub members: usize,
    pub top_features: Vec<FeatureRule>,
    pub importances: Vec<f64>,
    pub tree: TreeNode,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainParams {
    pub max_depth: usize,
    pub top_k: usize,
    pub min_leaf: usize,
    /// Clusters smaller than this are skipped by [`explain_all`].
    pub min_members: usize,
}

impl Default for ExplainParams {
    fn default() -> Self {
        Self { max_depth: DEFAULT_MAX_DEPTH, top_k: TOP_K, min_leaf: MIN_LEAF, min_members: 2 * MIN_LEAF }
    }
}

#[inline]
fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

/// Best axis-aligned split of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Unweighted impurity decrease at this node.
    pub gain: f64,
}

/// Exhaustive search over midpoints between consecutive distinct values.
/// Ties go to the lower feature index, then the lower threshold.
pub fn best_split(x: ArrayView2<f64>, target: &[bool], samples: &[usize], min_leaf: usize) -> Option<SplitCandidate> {
    let total = samples.len();
    let pos_total = samples.iter().filter(|&&s| target[s]).count();
    let parent = gini(pos_total, total);
    let mut best: Option<SplitCandidate> = None;
    let mut order = samples.to_vec();
    for f in 0..x.ncols() {
        order.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]));
        let mut pos_left = 0;
        for cut in 1..total {
            if target[order[cut - 1]] {
                pos_left += 1;
            }
            let (lo, hi) = (x[[order[cut - 1], f]], x[[order[cut], f]]);
            if lo == hi || cut < min_leaf || total - cut < min_leaf {
                continue;
            }
            let (nl, nr) = (cut, total - cut);
            let child = (nl as f64 * gini(pos_left, nl) + nr as f64 * gini(pos_total - pos_left, nr)) / total as f64;
            let gain = parent - child;
            if gain > best.map_or(0.0, |b| b.gain) + 1e-15 {
                best = Some(SplitCandidate { feature: f, threshold: 0.5 * (lo + hi), gain });
            }
        }
    }
    best
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    target: &'a [bool],
    names: &'a [String],
    max_depth: usize,
    min_leaf: usize,
    n_total: usize,
}

impl Builder<'_> {
    fn grow(&self, samples: Vec<usize>, depth: usize) -> TreeNode {
        let pos = samples.iter().filter(|&&s| self.target[s]).count();
        let leaf = |samples: &[usize]| TreeNode::Leaf {
            samples: samples.len(),
            members: pos,
            member_fraction: pos as f64 / samples.len() as f64,
        };
        if depth >= self.max_depth || pos == 0 || pos == samples.len() {
            return leaf(&samples);
        }
        let Some(split) = best_split(self.x, self.target, &samples, self.min_leaf) else {
            return leaf(&samples);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&s| self.x[[s, split.feature]] <= split.threshold);
        let decrease = split.gain * samples.len() as f64 / self.n_total as f64;
        TreeNode::Split {
            feature: split.feature,
            feature_name: self.names[split.feature].clone(),
            threshold: split.threshold,
            decrease,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
        }
    }
}

/// `(members, samples)` below a node.
fn counts(node: &TreeNode) -> (usize, usize) {
    match node {
        TreeNode::Leaf { samples, members, .. } => (*members, *samples),
        TreeNode::Split { left, right, .. } => {
            let (a, b) = counts(left);
            let (c, d) = counts(right);
            (a + c, b + d)
        }
    }
}

fn format_threshold(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

/// Trains a Gini decision tree predicting membership in `cluster_id` (noise
/// counts as a non-member) and reports the `top_k` most important features.
pub fn explain_cluster(
    ds: &Dataset,
    cr: &ClusterResult,
    cluster_id: i64,
    params: &ExplainParams,
) -> Result<Explanation, ExplainError> {
    if params.max_depth == 0 {
        return Err(ExplainError::ZeroDepth);
    }
    let n = ds.n_points();
    if cr.labels.len() != n {
        return Err(ExplainError::LengthMismatch { dataset: n, labels: cr.labels.len() });
    }
    let target: Vec<bool> = cr.labels.iter().map(|&l| l == cluster_id).collect();
    let members = target.iter().filter(|&&t| t).count();
    if members == 0 {
        return Err(ExplainError::UnknownCluster(cluster_id));
    }
    if members < 2 || n - members < 2 {
        return Err(ExplainError::TooSmall { cluster: cluster_id, members, others: n - members });
    }
    let x = ds.features().view();
    let builder = Builder {
        x,
        target: &target,
        names: ds.feature_names(),
        max_depth: params.max_depth,
        min_leaf: params.min_leaf.max(1),
        n_total: n,
    };
    let tree = builder.grow((0..n).collect(), 0);
    if matches!(tree, TreeNode::Leaf { .. }) {
        return Err(ExplainError::Degenerate);
    }

    let d = ds.n_features();
    let mut importances = vec![0.0; d];
    let mut strongest: Vec<Option<(f64, f64, Direction)>> = vec![None; d];
    tree.walk(&mut |node| {
        if let TreeNode::Split { feature, threshold, decrease, left, right, .. } = node {
            importances[*feature] += decrease;
            let (lm, ls) = counts(left);
            let (rm, rs) = counts(right);
            let direction = if rm as f64 / rs as f64 >= lm as f64 / ls as f64 {
                Direction::Above
            } else {
                Direction::AtOrBelow
            };
            if strongest[*feature].is_none_or(|(best, _, _)| *decrease > best) {
                strongest[*feature] = Some((*decrease, *threshold, direction));
            }
        }
    });
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }

    let mut ranked: Vec<usize> = (0..d).filter(|&f| strongest[f].is_some()).collect();
    ranked.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    let names = ds.feature_names();
    let top_features = ranked
        .into_iter()
        .take(params.top_k)
        .map(|f| {
            let (_, threshold, direction) = strongest[f].expect("ranked features have a split");
            let op = match direction {
                Direction::Above => ">",
                Direction::AtOrBelow => "<=",
            };
            FeatureRule {
                feature: f,
                feature_name: names[f].clone(),
                importance: importances[f],
                threshold,
                direction,
                rule: format!("{} {op} {}", names[f], format_threshold(threshold)),
            }
        })
        .collect();

    let correct = (0..n)
        .filter(|&i| {
            let row: Vec<f64> = x.row(i).to_vec();
            tree.predict(&row) == target[i]
        })
        .count();
    Ok(Explanation {
        cluster_id,
        members,
        top_features,
        importances,
        tree,
        train_accuracy: correct as f64 / n as f64,
    })
}

/// Explanations for every cluster with at least `params.min_members` points.
/// Clusters the tree cannot separate are skipped.
pub fn explain_all(ds: &Dataset, cr: &ClusterResult, params: &ExplainParams) -> Vec<Explanation> {
    let sizes = cr.cluster_sizes();
    (0..cr.k_found)
        .filter(|&c| sizes[c] >= params.min_members.max(2))
        .filter_map(|c| match explain_cluster(ds, cr, c as i64, params) {
            Ok(e) => Some(e),
            Err(err) => {
                tracing::debug!(cluster = c, %err, "cluster not explained");
                None
            }
        })
        .collect()
}
