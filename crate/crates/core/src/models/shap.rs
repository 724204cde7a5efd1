//! Exact path-dependent TreeSHAP for boosted ensembles, plus an exhaustive
//! subset-enumeration oracle that uses the same conditional expectation.
//!
//! Attributions live in raw margin (log-odds) space, where local accuracy
//! `sum(phi) + base_value == margin(x)` holds exactly.

use serde::{Deserialize, Serialize};

use super::gbdt::GbdtModel;
use super::tree::{DecisionTree, Node};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapAttribution {
    pub per_feature: Vec<f64>,
    pub base_value: f64,
}

impl ShapAttribution {
    pub fn total(&self) -> f64 {
        self.base_value + self.per_feature.iter().sum::<f64>()
    }
}

pub const BRUTE_FORCE_MAX_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(
    path: &mut [PathElement],
    depth: usize,
    zero: f64,
    one: f64,
    feature: Option<usize>,
) {
    path[depth] = PathElement {
        feature,
        zero_fraction: zero,
        one_fraction: one,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one * path[i].pweight * (i + 1) as f64 / d1;
        path[i].pweight = zero * path[i].pweight * (depth - i) as f64 / d1;
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one * d1 / ((i + 1) as f64 * one);
            next_one = tmp - path[i].pweight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].pweight = path[i].pweight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].pweight - tmp * zero * (depth - i) as f64 / d1;
        } else {
            total += path[i].pweight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

struct Walker<'a> {
    tree: &'a DecisionTree,
    row: &'a [f64],
    phi: &'a mut [f64],
    buf: Vec<PathElement>,
}

impl Walker<'_> {
    /// The parent's path occupies `buf[parent..parent + depth]`; this call
    /// writes its own copy starting at `parent + depth`.
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        node: usize,
        parent: usize,
        mut depth: usize,
        zero: f64,
        one: f64,
        feature: Option<usize>,
    ) {
        let start = parent + depth;
        if depth > 0 {
            self.buf.copy_within(parent..parent + depth, start);
        }
        let path = &mut self.buf[start..];
        extend_path(path, depth, zero, one, feature);

        match &self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                for i in 1..=depth {
                    let w = unwound_path_sum(path, depth, i);
                    let el = path[i];
                    if let Some(f) = el.feature {
                        self.phi[f] += w * (el.one_fraction - el.zero_fraction) * value;
                    }
                }
            }
            Node::Split {
                feature: split,
                threshold,
                left,
                right,
                cover,
            } => {
                let (hot, cold) = if self.row[*split] <= *threshold {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                let hot_zero = self.tree.nodes[hot].cover() / cover;
                let cold_zero = self.tree.nodes[cold].cover() / cover;
                let mut incoming_zero = 1.0;
                let mut incoming_one = 1.0;
                if let Some(k) = (0..=depth).find(|&k| path[k].feature == Some(*split)) {
                    incoming_zero = path[k].zero_fraction;
                    incoming_one = path[k].one_fraction;
                    unwind_path(path, depth, k);
                    depth -= 1;
                }
                let split = Some(*split);
                self.recurse(
                    hot,
                    start,
                    depth + 1,
                    hot_zero * incoming_zero,
                    incoming_one,
                    split,
                );
                self.recurse(
                    cold,
                    start,
                    depth + 1,
                    cold_zero * incoming_zero,
                    0.0,
                    split,
                );
            }
        }
    }
}

/// Adds one tree's SHAP values for `row` into `phi`.
pub fn tree_shap_single(tree: &DecisionTree, row: &[f64], phi: &mut [f64]) {
    let d = tree.depth() + 2;
    let mut w = Walker {
        tree,
        row,
        phi,
        buf: vec![PathElement::default(); (d + 1) * (d + 2) / 2 + d],
    };
    w.recurse(0, 0, 0, 1.0, 1.0, None);
}

/// Exact TreeSHAP over all trees of the ensemble.
///
/// Conditional expectations follow the training covers stored in each node,
/// so the training sample acts as the background distribution.
pub fn tree_shap(model: &GbdtModel, row: &[f64]) -> ShapAttribution {
    let mut phi = vec![0.0; row.len()];
    let max_depth = model
        .trees
        .iter()
        .map(DecisionTree::depth)
        .max()
        .unwrap_or(0)
        + 2;
    let mut buf = vec![PathElement::default(); (max_depth + 1) * (max_depth + 2) / 2 + max_depth];
    for tree in &model.trees {
        let mut w = Walker {
            tree,
            row,
            phi: &mut phi,
            buf: std::mem::take(&mut buf),
        };
        w.recurse(0, 0, 0, 1.0, 1.0, None);
        buf = w.buf;
    }
    ShapAttribution {
        per_feature: phi,
        base_value: model.expected_margin(),
    }
}

/// `E[f(x) | x_S]` for one tree: features in `subset` follow `row`, the rest
/// are averaged over both children by cover.
fn conditional_expectation(tree: &DecisionTree, node: usize, row: &[f64], subset: u32) -> f64 {
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => *value,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            if subset & (1 << feature) != 0 {
                let next = if row[*feature] <= *threshold {
                    *left
                } else {
                    *right
                };
                conditional_expectation(tree, next, row, subset)
            } else {
                let cl = tree.nodes[*left].cover();
                let cr = tree.nodes[*right].cover();
                (cl * conditional_expectation(tree, *left, row, subset)
                    + cr * conditional_expectation(tree, *right, row, subset))
                    / cover
            }
        }
    }
}

/// Shapley values by enumerating all `2^p` feature subsets.
pub fn brute_shapley(model: &GbdtModel, row: &[f64]) -> Result<ShapAttribution> {
    let p = row.len();
    if p > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::TooManyFeatures {
            got: p,
            max: BRUTE_FORCE_MAX_FEATURES,
        });
    }
    let value = |subset: u32| -> f64 {
        model.base_score
            + model
                .trees
                .iter()
                .map(|t| conditional_expectation(t, 0, row, subset))
                .sum::<f64>()
    };
    let n_subsets = 1u32 << p;
    let values: Vec<f64> = (0..n_subsets).map(value).collect();

    // weight(|S|) = |S|! (p - |S| - 1)! / p!
    let fact = |n: usize| -> f64 { (1..=n).map(|k| k as f64).product() };
    let weights: Vec<f64> = (0..p)
        .map(|s| fact(s) * fact(p - s - 1) / fact(p))
        .collect();

    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1u32 << j;
        for s in 0..n_subsets {
            if s & bit != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            *phi_j += weights[size] * (values[(s | bit) as usize] - values[s as usize]);
        }
    }
    Ok(ShapAttribution {
        per_feature: phi,
        base_value: values[0],
    })
}
