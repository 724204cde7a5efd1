//! Tree construction: median candidate splits, target-driven or blind.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Table;
use crate::error::{Error, Result};
use crate::util::{median_of_sorted, population_variance, seeded_rng};

pub const DEFAULT_MAX_DEPTH: usize = 50;

/// Reductions closer than this count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum AdtNode {
    Internal {
        feature: String,
        split_value: f64,
        left: Box<AdtNode>,
        right: Box<AdtNode>,
    },
    Leaf {
        count: usize,
        /// Observed (min, max) per QI column, keyed by column name.
        bounds: BTreeMap<String, (f64, f64)>,
    },
}

impl AdtNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self, AdtNode::Leaf { .. })
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            AdtNode::Leaf { .. } => 1,
            AdtNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            AdtNode::Leaf { .. } => 0,
            AdtNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaves in pre-order; position in the returned list is the leaf id.
    pub fn leaves(&self) -> Vec<&AdtNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                AdtNode::Leaf { .. } => out.push(node),
                AdtNode::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.leaves()
            .into_iter()
            .map(|l| match l {
                AdtNode::Leaf { count, .. } => *count,
                AdtNode::Internal { .. } => unreachable!(),
            })
            .collect()
    }

    /// Structural sanity: finite numbers, `min <= max`, non-empty leaves,
    /// and every leaf covering the same column set.
    pub fn validate(&self) -> Result<()> {
        let mut columns: Option<Vec<&String>> = None;
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                AdtNode::Internal {
                    split_value,
                    left,
                    right,
                    feature,
                } => {
                    if !split_value.is_finite() || feature.is_empty() {
                        return Err(Error::MalformedTree(format!("bad split on '{feature}'")));
                    }
                    stack.push(right);
                    stack.push(left);
                }
                AdtNode::Leaf { count, bounds } => {
                    if *count == 0 {
                        return Err(Error::MalformedTree("empty leaf".into()));
                    }
                    for (name, (lo, hi)) in bounds {
                        if !lo.is_finite() || !hi.is_finite() || lo > hi {
                            return Err(Error::MalformedTree(format!(
                                "leaf bound {name}={lo}..{hi}"
                            )));
                        }
                    }
                    let keys: Vec<&String> = bounds.keys().collect();
                    match &columns {
                        None => columns = Some(keys),
                        Some(c) if *c != keys => {
                            return Err(Error::MalformedTree("leaves disagree on columns".into()))
                        }
                        Some(_) => {}
                    }
                }
            }
        }
        Ok(())
    }
}

/// `var(parent) - (nL var(L) + nR var(R)) / n`, population variances throughout.
pub fn variance_reduction(parent: &[f64], left: &[f64], right: &[f64]) -> f64 {
    let n = parent.len() as f64;
    population_variance(parent)
        - (left.len() as f64 * population_variance(left)
            + right.len() as f64 * population_variance(right))
            / n
}

/// A median split that leaves at least `2k` rows on each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Position among the QI features.
    pub feature: usize,
    pub split_value: f64,
    pub reduction: f64,
}

/// One candidate per QI feature (its median), filtered to those where both
/// children keep `min_child` rows.
fn candidates(t: &Table, qi: &[usize], rows: &[usize], min_child: usize) -> Vec<Candidate> {
    let ti = t.schema().target_index();
    let data = t.rows();
    let n = rows.len() as f64;
    let (sum, sum_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| {
        let y = data[r][ti];
        (s + y, q + y * y)
    });
    let var = |s: f64, q: f64, m: f64| {
        if m == 0.0 {
            0.0
        } else {
            (q / m - (s / m) * (s / m)).max(0.0)
        }
    };
    let parent_var = var(sum, sum_sq, n);

    let mut out = Vec::new();
    let mut values = Vec::with_capacity(rows.len());
    for (f, &col) in qi.iter().enumerate() {
        values.clear();
        values.extend(rows.iter().map(|&r| data[r][col]));
        values.sort_by(f64::total_cmp);
        let median = median_of_sorted(&values);
        let (mut nl, mut sl, mut ql) = (0.0, 0.0, 0.0);
        for &r in rows {
            if data[r][col] <= median {
                let y = data[r][ti];
                nl += 1.0;
                sl += y;
                ql += y * y;
            }
        }
        let nr = n - nl;
        if (nl as usize) < min_child || (nr as usize) < min_child {
            continue;
        }
        let reduction =
            parent_var - (nl * var(sl, ql, nl) + nr * var(sum - sl, sum_sq - ql, nr)) / n;
        out.push(Candidate {
            feature: f,
            split_value: median,
            reduction,
        });
    }
    out
}

/// Highest-reduction valid median split; ties go to the lower schema index.
pub fn best_split(t: &Table, k: usize) -> Option<Candidate> {
    let qi = t.schema().qi_indices();
    let rows: Vec<usize> = (0..t.n_rows()).collect();
    let mut best: Option<Candidate> = None;
    for c in candidates(t, &qi, &rows, 2 * k) {
        if best.is_none_or(|b| c.reduction > b.reduction + TIE_TOLERANCE) {
            best = Some(c);
        }
    }
    best
}

/// How a node picks its split among the valid median candidates.
pub enum SplitChooser {
    TargetDriven,
    /// Uniformly random valid feature, ignoring the target.
    Blind(Box<ChaCha8Rng>),
}

impl SplitChooser {
    pub fn blind(seed: u64) -> Self {
        SplitChooser::Blind(Box::new(seeded_rng(seed, "blind-split")))
    }

    fn choose(&mut self, cands: &[Candidate]) -> Option<Candidate> {
        match self {
            SplitChooser::TargetDriven => {
                let mut best: Option<Candidate> = None;
                for c in cands {
                    if best.is_none_or(|b| c.reduction > b.reduction + TIE_TOLERANCE) {
                        best = Some(*c);
                    }
                }
                best
            }
            SplitChooser::Blind(rng) => cands.choose(rng.as_mut()).copied(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdtParams {
    pub max_depth: usize,
}

impl Default for AdtParams {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

/// Target-driven tree over all rows of `t`.
pub fn build_adt(t: &Table, k: usize) -> Result<AdtNode> {
    build_tree(t, k, AdtParams::default(), &mut SplitChooser::TargetDriven)
}

/// Blind tree: same candidates and stopping rules, random feature choice.
pub fn build_blind_adt(t: &Table, k: usize, seed: u64) -> Result<AdtNode> {
    build_tree(t, k, AdtParams::default(), &mut SplitChooser::blind(seed))
}

pub fn build_tree(
    t: &Table,
    k: usize,
    params: AdtParams,
    chooser: &mut SplitChooser,
) -> Result<AdtNode> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if t.n_rows() < 2 * k {
        return Err(Error::TooFewRows {
            got: t.n_rows(),
            needed: 2 * k,
        });
    }
    let ctx = BuildCtx {
        t,
        qi: t.schema().qi_indices(),
        names: t.schema().qi_names(),
        k,
        max_depth: params.max_depth,
    };
    let rows: Vec<usize> = (0..t.n_rows()).collect();
    Ok(ctx.grow(rows, 0, chooser))
}

struct BuildCtx<'a> {
    t: &'a Table,
    qi: Vec<usize>,
    names: Vec<String>,
    k: usize,
    max_depth: usize,
}

impl BuildCtx<'_> {
    fn grow(&self, rows: Vec<usize>, depth: usize, chooser: &mut SplitChooser) -> AdtNode {
        let data = self.t.rows();
        let ti = self.t.schema().target_index();
        let first = data[rows[0]][ti];
        let pure = rows.iter().all(|&r| data[r][ti] == first);
        if rows.len() < 4 * self.k || pure || depth >= self.max_depth {
            return self.leaf(&rows);
        }
        let cands = candidates(self.t, &self.qi, &rows, 2 * self.k);
        let Some(c) = chooser.choose(&cands) else {
            return self.leaf(&rows);
        };
        let col = self.qi[c.feature];
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| data[i][col] <= c.split_value);
        drop(rows);
        let left = self.grow(l, depth + 1, chooser);
        let right = self.grow(r, depth + 1, chooser);
        AdtNode::Internal {
            feature: self.names[c.feature].clone(),
            split_value: c.split_value,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn leaf(&self, rows: &[usize]) -> AdtNode {
        let data = self.t.rows();
        let bounds = self
            .qi
            .iter()
            .zip(&self.names)
            .map(|(&col, name)| {
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                        (lo.min(data[r][col]), hi.max(data[r][col]))
                    });
                (name.clone(), (lo, hi))
            })
            .collect();
        AdtNode::Leaf {
            count: rows.len(),
            bounds,
        }
    }
}
