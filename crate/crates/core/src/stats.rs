//! Paired-sample statistics for the k-sweep: exact Wilcoxon signed-rank,
//! Cohen's d, percentile bootstrap intervals, and F1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Exact enumeration limit for the signed-rank null distribution.
pub const WILCOXON_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<f64>>,
}

impl PairedSeries {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::EmptyInput);
        }
        if a.len() != b.len() {
            return Err(Error::InvalidArgument(format!(
                "paired series lengths differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        Ok(Self { a, b, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.a.len() {
            return Err(Error::InvalidArgument(
                "label count differs from series length".into(),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// `a[i] - b[i]`.
    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(T+, T-)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
/// Returned doubled so that half-ranks stay integral.
fn doubled_average_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, times two
        let doubled = (i + 1 + j + 1) as u64;
        for &o in &order[i..=j] {
            ranks[o] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided exact signed-rank test on `a - b`; zero differences are dropped.
pub fn wilcoxon_exact(p: &PairedSeries) -> Result<WilcoxonResult> {
    let d: Vec<f64> = p.differences().into_iter().filter(|x| *x != 0.0).collect();
    if d.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    if d.len() > WILCOXON_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "exact test supports at most {WILCOXON_MAX_N} non-zero pairs, got {}",
            d.len()
        )));
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = doubled_average_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let t_plus: u64 = ranks
        .iter()
        .zip(&d)
        .filter(|(_, x)| **x > 0.0)
        .map(|(r, _)| r)
        .sum();
    let w = t_plus.min(total - t_plus);

    // counts[s]: sign patterns whose positive doubled-rank sum is s
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in &ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let patterns = 2f64.powi(d.len() as i32);
    let tail: u64 = counts[..=w as usize].iter().sum();
    Ok(WilcoxonResult {
        statistic: w as f64 / 2.0,
        p_value: (2.0 * tail as f64 / patterns).min(1.0),
        n_used: d.len(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (ddof = 1).
fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// `mean(a - b) / sd(a - b)` with the sample standard deviation.
pub fn cohens_d_paired(p: &PairedSeries) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::InvalidArgument(
            "Cohen's d needs at least two pairs".into(),
        ));
    }
    let d = p.differences();
    let sd = sample_sd(&d);
    if sd == 0.0 || sd < 1e-12 * mean(&d).abs() {
        return Err(Error::ZeroSpread);
    }
    Ok(mean(&d) / sd)
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
    pub level: f64,
    pub resamples: usize,
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(
    values: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if resamples == 0 || !(0.0..1.0).contains(&level) || level == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs resamples > 0 and level in (0, 1), got {resamples} and {level}"
        )));
    }
    let n = values.len();
    let mut rng = seeded_rng(seed, "bootstrap");
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval {
        mean: mean(values),
        low: quantile_sorted(&means, alpha),
        high: quantile_sorted(&means, 1.0 - alpha),
        level,
        resamples,
    })
}

/// F1 for the positive class 1. Returns 0 when there are no true positives,
/// including the case with no positive predictions and no positive labels.
pub fn f1_score(predictions: &[u8], truth: &[u8]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidArgument(
            "prediction and label lengths differ".into(),
        ));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}
