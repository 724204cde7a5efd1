//! Gradient-boosted trees with logistic loss.
//!
//! Each round fits a regression tree to the gradient/hessian statistics of
//! the current margins using exact greedy splits. Leaf weights are the
//! Newton step `-G / (H + lambda)` scaled by the learning rate. No row or
//! column subsampling, so fitting is fully deterministic.

use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, Node, TreeBuilder};
use crate::dataset::Table;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 6,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
        }
    }
}

/// Splits whose loss reduction does not exceed this are not taken.
const MIN_SPLIT_GAIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<DecisionTree>,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Initial margin: log-odds of the training base rate.
    pub base_score: f64,
    /// Mean training log-loss after each boosting round.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn log_loss(margins: &[f64], y: &[f64]) -> f64 {
    let s: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| {
            // log(1 + e^m) - t*m, computed stably
            let softplus = if m > 0.0 {
                m + (-m).exp().ln_1p()
            } else {
                m.exp().ln_1p()
            };
            softplus - t * m
        })
        .sum();
    s / margins.len() as f64
}

/// `seed` is accepted for interface symmetry; the algorithm draws no randomness.
pub fn fit_gbdt(train: &Table, seed: u64) -> Result<GbdtModel> {
    fit_gbdt_with(train, GbdtParams::default(), seed)
}

pub fn fit_gbdt_with(train: &Table, params: GbdtParams, _seed: u64) -> Result<GbdtModel> {
    if train.n_rows() < 10 {
        return Err(Error::InsufficientRows {
            requested: 10,
            available: train.n_rows(),
        });
    }
    let counts = train.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::DegenerateTarget);
    }
    let x = train.feature_matrix();
    let y: Vec<f64> = train.targets().into_iter().map(f64::from).collect();
    fit_matrix(&x, &y, params)
}

/// Fits on a raw feature matrix with 0/1 labels.
pub fn fit_matrix(x: &[Vec<f64>], y: &[f64], params: GbdtParams) -> Result<GbdtModel> {
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let p = x[0].len();
    let rate = y.iter().sum::<f64>() / n as f64;
    if rate <= 0.0 || rate >= 1.0 {
        return Err(Error::DegenerateTarget);
    }
    let base_score = (rate / (1.0 - rate)).ln();

    let columns: Vec<Vec<f64>> = (0..p).map(|f| x.iter().map(|r| r[f]).collect()).collect();
    let presorted: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            // stable sort keeps row order among ties
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        })
        .collect();

    let mut margins = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut loss_history = Vec::with_capacity(params.n_estimators);
    let mut in_left = vec![false; n];

    for _ in 0..params.n_estimators {
        for i in 0..n {
            let pr = sigmoid(margins[i]);
            grad[i] = pr - y[i];
            hess[i] = pr * (1.0 - pr);
        }
        let mut b = TreeBuilder::new();
        let ctx = BoostCtx {
            columns: &columns,
            grad: &grad,
            hess: &hess,
            params: &params,
        };
        grow(&ctx, &mut b, presorted.clone(), 0, &mut in_left);
        let tree = b.finish();
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(&x[i]);
        }
        loss_history.push(log_loss(&margins, y));
        trees.push(tree);
    }
    Ok(GbdtModel {
        trees,
        learning_rate: params.learning_rate,
        max_depth: params.max_depth,
        base_score,
        loss_history,
    })
}

struct BoostCtx<'a> {
    columns: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// `sorted[f]` lists this node's rows ordered by feature `f`.
fn grow(
    ctx: &BoostCtx<'_>,
    b: &mut TreeBuilder,
    sorted: Vec<Vec<u32>>,
    depth: usize,
    in_left: &mut [bool],
) -> usize {
    let slot = b.reserve();
    let rows = &sorted[0];
    let (g_sum, h_sum) = rows.iter().fold((0.0, 0.0), |(g, h), &r| {
        (g + ctx.grad[r as usize], h + ctx.hess[r as usize])
    });
    let lambda = ctx.params.lambda;
    let leaf = Node::Leaf {
        value: -g_sum / (h_sum + lambda) * ctx.params.learning_rate,
        cover: h_sum,
    };
    if depth >= ctx.params.max_depth || rows.len() < 2 {
        b.set(slot, leaf);
        return slot;
    }

    let parent = score(g_sum, h_sum, lambda);
    let mcw = ctx.params.min_child_weight;
    let mut best: Option<(f64, usize, f64)> = None;
    for (f, order) in sorted.iter().enumerate() {
        let col = &ctx.columns[f];
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..order.len() - 1 {
            let r = order[w] as usize;
            gl += ctx.grad[r];
            hl += ctx.hess[r];
            let v = col[r];
            let next = col[order[w + 1] as usize];
            if v == next {
                continue;
            }
            let hr = h_sum - hl;
            if hl < mcw || hr < mcw {
                continue;
            }
            let gain =
                score(gl, hl, lambda) + score(g_sum - gl, hr, lambda) - parent - ctx.params.gamma;
            if gain > MIN_SPLIT_GAIN && best.is_none_or(|(bg, _, _)| gain > bg) {
                best = Some((gain, f, (v + next) / 2.0));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        b.set(slot, leaf);
        return slot;
    };

    let col = &ctx.columns[feature];
    for &r in rows {
        in_left[r as usize] = col[r as usize] <= threshold;
    }
    let mut left_sorted = Vec::with_capacity(sorted.len());
    let mut right_sorted = Vec::with_capacity(sorted.len());
    for order in &sorted {
        let (l, r): (Vec<u32>, Vec<u32>) = order.iter().partition(|&&i| in_left[i as usize]);
        left_sorted.push(l);
        right_sorted.push(r);
    }
    drop(sorted);
    let left = grow(ctx, b, left_sorted, depth + 1, in_left);
    let right = grow(ctx, b, right_sorted, depth + 1, in_left);
    b.set(
        slot,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover: h_sum,
        },
    );
    slot
}

impl GbdtModel {
    /// Assembles a model from explicit trees (useful for constructed examples).
    pub fn from_trees(trees: Vec<DecisionTree>, base_score: f64) -> Self {
        Self {
            max_depth: trees.iter().map(DecisionTree::depth).max().unwrap_or(0),
            trees,
            learning_rate: 1.0,
            base_score,
            loss_history: Vec::new(),
        }
    }

    /// Raw log-odds margin.
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }

    /// Expected margin under the cover-weighted (path-dependent) distribution.
    pub fn expected_margin(&self) -> f64 {
        self.base_score
            + self
                .trees
                .iter()
                .map(DecisionTree::expected_value)
                .sum::<f64>()
    }

    pub fn n_features_used(&self) -> usize {
        self.trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature + 1),
                Node::Leaf { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }
}
