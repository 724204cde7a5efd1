//! Random forest classifier used to locate decision-boundary records.
//!
//! Bootstrap samples, `floor(sqrt(p))` candidate features per split, Gini
//! impurity, depth-limited trees. Leaves store the class-1 proportion and the
//! forest probability is the mean leaf proportion (soft vote).

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, Node, TreeBuilder};
use crate::dataset::Table;
use crate::error::{Error, Result};
use crate::util::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub max_depth: usize,
    pub seed: u64,
}

pub fn fit_forest(train: &Table, seed: u64) -> Result<ForestModel> {
    fit_forest_with(train, ForestParams::default(), seed)
}

pub fn fit_forest_with(train: &Table, params: ForestParams, seed: u64) -> Result<ForestModel> {
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
    let y = train.targets();
    let n = x.len();
    let p = x[0].len();
    let mtry = ((p as f64).sqrt().floor() as usize).max(1);
    let mut rng = seeded_rng(seed, "random-forest");
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let boot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let mut b = TreeBuilder::new();
        let ctx = GrowCtx {
            x: &x,
            y: &y,
            mtry,
            max_depth: params.max_depth,
        };
        grow(&ctx, &mut b, boot, 0, &mut rng);
        trees.push(b.finish());
    }
    Ok(ForestModel {
        trees,
        max_depth: params.max_depth,
        seed,
    })
}

struct GrowCtx<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    mtry: usize,
    max_depth: usize,
}

fn gini(n1: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = n1 / n;
    2.0 * p * (1.0 - p)
}

fn grow(
    ctx: &GrowCtx<'_>,
    b: &mut TreeBuilder,
    rows: Vec<usize>,
    depth: usize,
    rng: &mut impl Rng,
) -> usize {
    let slot = b.reserve();
    let n = rows.len() as f64;
    let ones = rows.iter().filter(|&&r| ctx.y[r] == 1).count() as f64;
    let leaf = Node::Leaf {
        value: ones / n,
        cover: n,
    };
    if depth >= ctx.max_depth || ones == 0.0 || ones == n || rows.len() < 2 {
        b.set(slot, leaf);
        return slot;
    }
    let p = ctx.x[0].len();
    let mut feats: Vec<usize> = sample(rng, p, ctx.mtry.min(p)).into_vec();
    feats.sort_unstable();

    // (impurity, feature, threshold); lowest feature then lowest threshold on ties
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
    for &f in &feats {
        sorted.clear();
        sorted.extend(rows.iter().map(|&r| (ctx.x[r][f], ctx.y[r])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_n = 0.0;
        let mut left_ones = 0.0;
        for i in 0..sorted.len() - 1 {
            left_n += 1.0;
            left_ones += f64::from(sorted[i].1);
            if sorted[i].0 == sorted[i + 1].0 {
                continue;
            }
            let right_n = n - left_n;
            let right_ones = ones - left_ones;
            let imp = (left_n * gini(left_ones, left_n) + right_n * gini(right_ones, right_n)) / n;
            if best.is_none_or(|(b_imp, _, _)| imp < b_imp) {
                best = Some((imp, f, (sorted[i].0 + sorted[i + 1].0) / 2.0));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        b.set(slot, leaf);
        return slot;
    };
    let (l, r): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&i| ctx.x[i][feature] <= threshold);
    let left = grow(ctx, b, l, depth + 1, rng);
    let right = grow(ctx, b, r, depth + 1, rng);
    b.set(
        slot,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover: n,
        },
    );
    slot
}

impl ForestModel {
    /// Class-1 probability: mean over trees of the leaf's class-1 proportion.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        let s: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        (s / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    pub fn predict_proba_table(&self, t: &Table) -> Vec<f64> {
        (0..t.n_rows())
            .map(|i| self.predict_proba(&t.features(i)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnKind, ColumnSpec, Schema};

    fn separable(n: usize) -> Table {
        let s = Schema::new(vec![
            ColumnSpec::qi("a", ColumnKind::Continuous),
            ColumnSpec::qi("b", ColumnKind::Continuous),
            ColumnSpec::target("y"),
        ])
        .unwrap();
        let mut rng = seeded_rng(1, "toy");
        let rows = (0..n)
            .map(|_| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                vec![a, b, if a + b > 0.0 { 1.0 } else { 0.0 }]
            })
            .collect();
        Table::new(s, rows).unwrap()
    }

    #[test]
    fn separable_training_accuracy() {
        let t = separable(400);
        let m = fit_forest(&t, 7).unwrap();
        assert_eq!(m.trees.len(), 50);
        let probs = m.predict_proba_table(&t);
        let correct = probs
            .iter()
            .zip(t.targets())
            .filter(|(p, y)| (**p >= 0.5) == (*y == 1))
            .count();
        assert!(correct as f64 / 400.0 >= 0.95, "accuracy {correct}/400");
        assert!(m.trees.iter().all(|tr| tr.depth() <= 5));
    }

    #[test]
    fn deterministic_given_seed() {
        let t = separable(200);
        let a = fit_forest(&t, 3).unwrap().predict_proba_table(&t);
        let b = fit_forest(&t, 3).unwrap().predict_proba_table(&t);
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_is_rejected() {
        let s = Schema::new(vec![
            ColumnSpec::qi("a", ColumnKind::Continuous),
            ColumnSpec::target("y"),
        ])
        .unwrap();
        let t = Table::new(s, (0..20).map(|i| vec![i as f64, 1.0]).collect()).unwrap();
        assert!(matches!(fit_forest(&t, 0), Err(Error::DegenerateTarget)));
    }

    fn constant_forest(values: &[f64]) -> ForestModel {
        ForestModel {
            trees: values.iter().map(|&v| DecisionTree::leaf(v, 1.0)).collect(),
            max_depth: 5,
            seed: 0,
        }
    }

    #[test]
    fn soft_vote_average() {
        assert_eq!(constant_forest(&[1.0; 50]).predict_proba(&[0.0]), 1.0);
        assert_eq!(constant_forest(&[0.0; 50]).predict_proba(&[0.0]), 0.0);
        let mut half = vec![1.0; 25];
        half.extend(vec![0.0; 25]);
        assert_eq!(constant_forest(&half).predict_proba(&[0.0]), 0.5);
    }

    #[test]
    fn tree_order_does_not_matter() {
        let t = separable(150);
        let m = fit_forest(&t, 11).unwrap();
        let mut rev = m.clone();
        rev.trees.reverse();
        for i in 0..t.n_rows() {
            let f = t.features(i);
            assert!((m.predict_proba(&f) - rev.predict_proba(&f)).abs() < 1e-12);
        }
    }
}
