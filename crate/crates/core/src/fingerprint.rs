//! SHAP-distribution fingerprints and their per-feature Wasserstein comparison.
//!
//! A fingerprint is the set of SHAP value samples for the three features with
//! the largest mean |phi| on a fixed-size subsample. The cloud-side
//! fingerprint is always extracted for the client's feature names, so the
//! per-feature distances compare like with like.

use serde::{Deserialize, Serialize};

use crate::anonymizer::{anonymize, flatten_midpoints};
use crate::dataset::{stratified_subsample, Table};
use crate::error::{Error, Result};
use crate::models::{fit_gbdt_with, tree_shap, GbdtParams};
use crate::traps::OutsourcedDataset;

pub const TOP_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapFingerprint {
    /// Feature names, most important first.
    pub features: Vec<String>,
    /// `samples[i]` holds one SHAP value per subsample row for `features[i]`.
    pub samples: Vec<Vec<f64>>,
}

impl ShapFingerprint {
    pub fn samples_for(&self, feature: &str) -> Option<&[f64]> {
        self.features
            .iter()
            .position(|f| f == feature)
            .map(|i| self.samples[i].as_slice())
    }
}

/// Fingerprint together with diagnostics of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintRun {
    pub fingerprint: ShapFingerprint,
    /// Mean |phi| per feature in schema order.
    pub mean_abs_shap: Vec<(String, f64)>,
    /// Largest `|sum(phi) + base - margin|` over all explained rows.
    pub max_local_accuracy_error: f64,
    pub rows_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerprintParams {
    pub subsample: usize,
    pub gbdt: GbdtParams,
}

impl Default for FingerprintParams {
    fn default() -> Self {
        Self {
            subsample: 2000,
            gbdt: GbdtParams::default(),
        }
    }
}

/// Fits the boosted model on a stratified subsample and explains every row of it.
fn explain_subsample(
    t: &Table,
    params: &FingerprintParams,
    seed: u64,
) -> Result<(Vec<String>, Vec<Vec<f64>>, f64)> {
    let n = params.subsample.min(t.n_rows());
    let sub = stratified_subsample(t, n, seed)?;
    let model = fit_gbdt_with(&sub, params.gbdt, seed)?;
    let names = t.schema().qi_names();
    let mut per_feature = vec![Vec::with_capacity(n); names.len()];
    let mut max_err: f64 = 0.0;
    for i in 0..sub.n_rows() {
        let x = sub.features(i);
        let a = tree_shap(&model, &x);
        max_err = max_err.max((a.total() - model.margin(&x)).abs());
        for (j, v) in a.per_feature.into_iter().enumerate() {
            per_feature[j].push(v);
        }
    }
    Ok((names, per_feature, max_err))
}

fn mean_abs(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v.abs()).sum::<f64>() / xs.len().max(1) as f64
}

/// Client baseline: ranks features by mean |SHAP| (ties to the lower schema
/// index) and keeps the top three.
pub fn compute_fingerprint_run(
    t: &Table,
    params: &FingerprintParams,
    seed: u64,
) -> Result<FingerprintRun> {
    let (names, samples, max_err) = explain_subsample(t, params, seed)?;
    let importance: Vec<f64> = samples.iter().map(|s| mean_abs(s)).collect();
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order.truncate(TOP_FEATURES.min(names.len()));
    Ok(FingerprintRun {
        fingerprint: ShapFingerprint {
            features: order.iter().map(|&i| names[i].clone()).collect(),
            samples: order.iter().map(|&i| samples[i].clone()).collect(),
        },
        mean_abs_shap: names.iter().cloned().zip(importance).collect(),
        max_local_accuracy_error: max_err,
        rows_used: samples.first().map_or(0, Vec::len),
    })
}

pub fn compute_fingerprint(t: &Table, subsample_n: usize, seed: u64) -> Result<ShapFingerprint> {
    let params = FingerprintParams {
        subsample: subsample_n,
        ..Default::default()
    };
    Ok(compute_fingerprint_run(t, &params, seed)?.fingerprint)
}

/// Cloud-side fingerprint restricted to `features` (the client's ranking).
pub fn fingerprint_for_features(
    t: &Table,
    features: &[String],
    params: &FingerprintParams,
    seed: u64,
) -> Result<FingerprintRun> {
    let qi = t.schema().qi_names();
    let positions = features
        .iter()
        .map(|f| {
            qi.iter()
                .position(|q| q == f)
                .ok_or_else(|| Error::FeatureMismatch(f.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (names, samples, max_err) = explain_subsample(t, params, seed)?;
    Ok(FingerprintRun {
        fingerprint: ShapFingerprint {
            features: features.to_vec(),
            samples: positions.iter().map(|&i| samples[i].clone()).collect(),
        },
        mean_abs_shap: names
            .iter()
            .cloned()
            .zip(samples.iter().map(|s| mean_abs(s)))
            .collect(),
        max_local_accuracy_error: max_err,
        rows_used: samples.first().map_or(0, Vec::len),
    })
}

/// Exact 1-Wasserstein distance between two empirical distributions:
/// the integral of `|F_p - F_q|` over the merged support.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = p.to_vec();
    let mut b = q.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistance {
    pub feature: String,
    pub wasserstein: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintComparison {
    pub per_feature_wd: Vec<FeatureDistance>,
    pub violated: bool,
}

impl FingerprintComparison {
    pub fn max_wd(&self) -> f64 {
        self.per_feature_wd
            .iter()
            .map(|d| d.wasserstein)
            .fold(0.0, f64::max)
    }

    pub fn mean_wd(&self) -> f64 {
        let n = self.per_feature_wd.len().max(1) as f64;
        self.per_feature_wd
            .iter()
            .map(|d| d.wasserstein)
            .sum::<f64>()
            / n
    }
}

/// OR-rule: violated as soon as any single feature distance exceeds `epsilon`.
pub fn compare_fingerprints(
    client: &ShapFingerprint,
    cloud: &ShapFingerprint,
    epsilon: f64,
) -> Result<FingerprintComparison> {
    let per_feature_wd = client
        .features
        .iter()
        .zip(&client.samples)
        .map(|(f, s)| {
            let other = cloud
                .samples_for(f)
                .ok_or_else(|| Error::FeatureMismatch(f.clone()))?;
            Ok(FeatureDistance {
                feature: f.clone(),
                wasserstein: wasserstein_1d(s, other)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let violated = per_feature_wd.iter().any(|d| d.wasserstein > epsilon);
    Ok(FingerprintComparison {
        per_feature_wd,
        violated,
    })
}

/// Evaluates anonymized data against a client baseline: midpoint-flatten,
/// re-fingerprint on the baseline's features, compare.
pub fn evaluate_against_baseline(
    baseline: &ShapFingerprint,
    flattened: &Table,
    params: &FingerprintParams,
    epsilon: f64,
    seed: u64,
) -> Result<(FingerprintComparison, FingerprintRun)> {
    let run = fingerprint_for_features(flattened, &baseline.features, params, seed)?;
    let cmp = compare_fingerprints(baseline, &run.fingerprint, epsilon)?;
    Ok((cmp, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub epsilon: f64,
    pub honest_max_wd: f64,
    pub per_feature_wd: Vec<FeatureDistance>,
    pub sample_rows: usize,
    pub margin: f64,
}

/// One-time threshold calibration: anonymize a local sample honestly and
/// return the maximum honest per-feature distance scaled by `1 + margin`.
pub fn calibrate_epsilon(
    d: &Table,
    k: usize,
    margin: f64,
    sample_rows: usize,
    params: &FingerprintParams,
    seed: u64,
) -> Result<Calibration> {
    let n = sample_rows.min(d.n_rows());
    let sample = stratified_subsample(d, n, seed)?;
    let baseline = compute_fingerprint_run(&sample, params, seed)?.fingerprint;
    let local = OutsourcedDataset::untrapped(&sample, b"calibration")?;
    let flat = flatten_midpoints(&anonymize(&local, k)?.anonymized)?;
    let (cmp, _) = evaluate_against_baseline(&baseline, &flat, params, f64::INFINITY, seed)?;
    let honest_max = cmp.max_wd();
    Ok(Calibration {
        epsilon: honest_max * (1.0 + margin),
        honest_max_wd: honest_max,
        per_feature_wd: cmp.per_feature_wd,
        sample_rows: n,
        margin,
    })
}
