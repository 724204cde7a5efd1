//! Client-side audit: hash recomputation, sentinel presence, twin
//! consistency and the SHAP fingerprint check, combined by conjunction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::anonymizer::{compute_root_hash, flatten_midpoints, AnonymizationResult};
use crate::error::{Error, Result};
use crate::fingerprint::{evaluate_against_baseline, FeatureDistance, FingerprintParams};
use crate::traps::{TrackerId, TrapManifest};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer1Record {
    pub pass: bool,
    pub recomputed_hash: String,
    pub reported_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer2aRecord {
    pub pass: bool,
    pub present_count: usize,
    pub expected_count: usize,
    pub missing_ids: Vec<TrackerId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinPair {
    pub original: TrackerId,
    pub twin: TrackerId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer2bRecord {
    pub pass: bool,
    pub consistent_count: usize,
    pub expected_count: usize,
    /// Both ids present but routed to different leaves.
    pub mismatched_pairs: Vec<TwinPair>,
    /// At least one id absent from the leaf map.
    pub missing_pairs: Vec<TwinPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer3Record {
    pub pass: bool,
    pub per_feature_wd: Vec<FeatureDistance>,
    pub epsilon: f64,
    pub max_local_accuracy_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    ViolationDetected,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Verified => "verified",
            Verdict::ViolationDetected => "violation_detected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditWarning {
    pub layer: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub layer1: Layer1Record,
    pub layer2a: Layer2aRecord,
    pub layer2b: Layer2bRecord,
    pub layer3: Layer3Record,
    pub verdict: Verdict,
    /// Failing layers among "1", "2a", "2b", "3".
    pub triggered_layers: Vec<String>,
    pub warnings: Vec<AuditWarning>,
}

impl AuditReport {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Verified => 0,
            Verdict::ViolationDetected => 1,
        }
    }
}

pub fn layer1_hash(result: &AnonymizationResult) -> Result<Layer1Record> {
    result.tree.validate()?;
    let recomputed = compute_root_hash(&result.tree);
    Ok(Layer1Record {
        pass: recomputed == result.root_hash,
        recomputed_hash: recomputed,
        reported_hash: result.root_hash.clone(),
    })
}

pub fn layer2a_sentinels(result: &AnonymizationResult, manifest: &TrapManifest) -> Layer2aRecord {
    let missing_ids: Vec<TrackerId> = manifest
        .sentinel_ids
        .iter()
        .filter(|id| !result.leaf_map.contains_key(*id))
        .cloned()
        .collect();
    Layer2aRecord {
        pass: missing_ids.is_empty(),
        present_count: manifest.sentinel_ids.len() - missing_ids.len(),
        expected_count: manifest.sentinel_ids.len(),
        missing_ids,
    }
}

pub fn layer2b_twins(result: &AnonymizationResult, manifest: &TrapManifest) -> Layer2bRecord {
    let mut mismatched_pairs = Vec::new();
    let mut missing_pairs = Vec::new();
    for (orig, twin) in &manifest.twin_pairs {
        let pair = || TwinPair {
            original: orig.clone(),
            twin: twin.clone(),
        };
        match (result.leaf_map.get(orig), result.leaf_map.get(twin)) {
            (Some(a), Some(b)) if a == b => {}
            (Some(_), Some(_)) => mismatched_pairs.push(pair()),
            _ => missing_pairs.push(pair()),
        }
    }
    let bad = mismatched_pairs.len() + missing_pairs.len();
    Layer2bRecord {
        pass: bad == 0,
        consistent_count: manifest.twin_pairs.len() - bad,
        expected_count: manifest.twin_pairs.len(),
        mismatched_pairs,
        missing_pairs,
    }
}

pub fn layer3_xai(
    result: &AnonymizationResult,
    manifest: &TrapManifest,
    epsilon: f64,
    params: &FingerprintParams,
    seed: u64,
) -> Result<Layer3Record> {
    let baseline = manifest
        .xai_baseline
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("manifest carries no XAI baseline".into()))?;
    let flat = flatten_midpoints(&result.anonymized)?;
    let (cmp, run) = evaluate_against_baseline(baseline, &flat, params, epsilon, seed)?;
    Ok(Layer3Record {
        pass: !cmp.violated,
        per_feature_wd: cmp.per_feature_wd,
        epsilon,
        max_local_accuracy_error: run.max_local_accuracy_error,
    })
}

pub fn aggregate_verdict(
    layer1: Layer1Record,
    layer2a: Layer2aRecord,
    layer2b: Layer2bRecord,
    layer3: Layer3Record,
) -> AuditReport {
    let mut triggered_layers = Vec::new();
    for (name, pass) in [
        ("1", layer1.pass),
        ("2a", layer2a.pass),
        ("2b", layer2b.pass),
        ("3", layer3.pass),
    ] {
        if !pass {
            triggered_layers.push(name.to_string());
        }
    }
    let mut warnings = Vec::new();
    if layer2a.expected_count == 0 {
        warnings.push(AuditWarning {
            layer: "2a".into(),
            code: "vacuous_sentinels".into(),
            message: "manifest holds no sentinels; layer passes without testing anything".into(),
        });
    }
    if layer2b.expected_count == 0 {
        warnings.push(AuditWarning {
            layer: "2b".into(),
            code: "vacuous_twins".into(),
            message: "manifest holds no twin pairs; layer passes without testing anything".into(),
        });
    }
    AuditReport {
        schema_version: REPORT_SCHEMA_VERSION,
        verdict: if triggered_layers.is_empty() {
            Verdict::Verified
        } else {
            Verdict::ViolationDetected
        },
        layer1,
        layer2a,
        layer2b,
        layer3,
        triggered_layers,
        warnings,
    }
}

/// Runs all four layers and aggregates them.
pub fn audit(
    result: &AnonymizationResult,
    manifest: &TrapManifest,
    epsilon: f64,
    params: &FingerprintParams,
    seed: u64,
) -> Result<AuditReport> {
    let l1 = layer1_hash(result)?;
    let l2a = layer2a_sentinels(result, manifest);
    let l2b = layer2b_twins(result, manifest);
    let l3 = layer3_xai(result, manifest, epsilon, params, seed)?;
    Ok(aggregate_verdict(l1, l2a, l2b, l3))
}

/// Chance that dropping a `drop_fraction` share of `dataset_size` rows
/// uniformly misses all `sentinel_count` sentinels, with the exponent
/// `dataset_size * drop_fraction` kept real-valued.
pub fn evasion_probability(
    sentinel_count: usize,
    dataset_size: usize,
    drop_fraction: f64,
) -> Result<f64> {
    if dataset_size == 0 || sentinel_count > dataset_size {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= sentinels <= dataset size, got {sentinel_count} of {dataset_size}"
        )));
    }
    if !(0.0..=1.0).contains(&drop_fraction) {
        return Err(Error::InvalidArgument(format!(
            "drop fraction {drop_fraction} outside [0, 1]"
        )));
    }
    let n = dataset_size as f64;
    Ok((1.0 - sentinel_count as f64 / n).powf(n * drop_fraction))
}
