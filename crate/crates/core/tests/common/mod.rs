#![allow(dead_code)]

use anonaudit::dataset::{ColumnKind, ColumnSpec, Schema, Table};
use anonaudit::models::{DecisionTree, GbdtModel, Node};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random mixed-type table: 2 to 5 QIs, some with heavy ties, target loosely
/// tied to the first column.
pub fn random_table(rng: &mut ChaCha8Rng, n: usize) -> Table {
    let n_qi = rng.gen_range(2..=5);
    let mut cols = Vec::new();
    let mut kinds = Vec::new();
    for j in 0..n_qi {
        let kind = match rng.gen_range(0..3) {
            0 => ColumnKind::Continuous,
            1 => ColumnKind::Integer,
            _ => ColumnKind::Categorical,
        };
        let mut spec = ColumnSpec::qi(format!("q{j}"), kind);
        let levels = rng.gen_range(2..12usize);
        if kind == ColumnKind::Categorical {
            spec.labels = (0..levels).map(|l| format!("v{l}")).collect();
        }
        cols.push(spec);
        kinds.push((kind, levels));
    }
    cols.push(ColumnSpec::target("y"));
    let schema = Schema::new(cols).unwrap();
    let rows = (0..n)
        .map(|_| {
            let mut row: Vec<f64> = kinds
                .iter()
                .map(|&(kind, levels)| match kind {
                    ColumnKind::Continuous => rng.gen_range(0.0..100.0),
                    _ => rng.gen_range(0..levels) as f64,
                })
                .collect();
            let lift = if row[0] > 3.0 { 0.3 } else { 0.0 };
            row.push(f64::from(u8::from(rng.gen_bool(0.3 + lift))));
            row
        })
        .collect();
    Table::new(schema, rows).unwrap()
}

/// Random regression tree over `p` features with consistent covers.
pub fn random_tree(rng: &mut ChaCha8Rng, p: usize, max_depth: usize) -> DecisionTree {
    fn grow(rng: &mut ChaCha8Rng, p: usize, depth: usize, nodes: &mut Vec<Node>) -> (usize, f64) {
        let slot = nodes.len();
        if depth == 0 || rng.gen_bool(0.25) {
            let cover = rng.gen_range(1.0..50.0);
            nodes.push(Node::Leaf {
                value: rng.gen_range(-2.0..2.0),
                cover,
            });
            return (slot, cover);
        }
        nodes.push(Node::Leaf {
            value: 0.0,
            cover: 0.0,
        });
        let feature = rng.gen_range(0..p);
        let threshold = rng.gen_range(0.0..1.0);
        let (left, cl) = grow(rng, p, depth - 1, nodes);
        let (right, cr) = grow(rng, p, depth - 1, nodes);
        nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
            cover: cl + cr,
        };
        (slot, cl + cr)
    }
    let mut nodes = Vec::new();
    grow(rng, p, max_depth, &mut nodes);
    DecisionTree { nodes }
}

pub fn random_gbdt(rng: &mut ChaCha8Rng, p: usize) -> GbdtModel {
    let n_trees = rng.gen_range(1..=6);
    let trees = (0..n_trees)
        .map(|_| {
            let depth = rng.gen_range(1..=5);
            random_tree(rng, p, depth)
        })
        .collect();
    GbdtModel::from_trees(trees, rng.gen_range(-1.0..1.0))
}

/// Expected tree output when only the features in `known` are fixed to `x`;
/// unknown splits average their children by cover.
fn cond_exp(tree: &DecisionTree, node: usize, x: &[f64], known: &[bool]) -> f64 {
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => *value,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            if known[*feature] {
                let next = if x[*feature] <= *threshold {
                    *left
                } else {
                    *right
                };
                cond_exp(tree, next, x, known)
            } else {
                let cl = tree.nodes[*left].cover();
                let cr = tree.nodes[*right].cover();
                (cl * cond_exp(tree, *left, x, known) + cr * cond_exp(tree, *right, x, known))
                    / (cl + cr)
            }
        }
    }
}

/// Shapley values averaged over every feature ordering.
pub fn permutation_shapley(model: &GbdtModel, x: &[f64]) -> Vec<f64> {
    let p = x.len();
    let value = |known: &[bool]| -> f64 {
        model.base_score
            + model
                .trees
                .iter()
                .map(|t| cond_exp(t, 0, x, known))
                .sum::<f64>()
    };
    let mut perms: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..p {
        let mut next = Vec::new();
        for pre in &perms {
            for j in (0..p).filter(|j| !pre.contains(j)) {
                let mut v = pre.clone();
                v.push(j);
                next.push(v);
            }
        }
        perms = next;
    }
    let mut phi = vec![0.0; p];
    for perm in &perms {
        let mut known = vec![false; p];
        let mut prev = value(&known);
        for &j in perm {
            known[j] = true;
            let cur = value(&known);
            phi[j] += cur - prev;
            prev = cur;
        }
    }
    phi.iter().map(|v| v / perms.len() as f64).collect()
}

/// W1 on a regular grid: both samples must sit on multiples of `step`,
/// where both empirical CDFs are constant inside each cell.
pub fn grid_w1(p: &[f64], q: &[f64], step: f64) -> f64 {
    let lo = p.iter().chain(q).cloned().fold(f64::INFINITY, f64::min);
    let hi = p.iter().chain(q).cloned().fold(f64::NEG_INFINITY, f64::max);
    let cells = ((hi - lo) / step).round() as usize;
    let cdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
    (0..cells)
        .map(|c| {
            let mid = lo + (c as f64 + 0.5) * step;
            (cdf(p, mid) - cdf(q, mid)).abs() * step
        })
        .sum()
}

/// W1 as the integral of |F_p^-1(u) - F_q^-1(u)| over u in (0, 1).
pub fn quantile_w1(p: &[f64], q: &[f64]) -> f64 {
    let mut a = p.to_vec();
    let mut b = q.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = (0..=a.len())
        .map(|i| i as f64 / a.len() as f64)
        .chain((0..=b.len()).map(|j| j as f64 / b.len() as f64))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    let inv = |s: &[f64], u: f64| s[((u * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
    cuts.windows(2)
        .map(|w| {
            let u = 0.5 * (w[0] + w[1]);
            (inv(&a, u) - inv(&b, u)).abs() * (w[1] - w[0])
        })
        .sum()
}
