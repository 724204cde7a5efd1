//! Run configuration with validated defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::FingerprintParams;
use crate::models::{ForestParams, GbdtParams};
use crate::traps::SentinelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub epsilon: f64,
    pub shap_subsample: usize,
    pub sentinel_ratio: f64,
    pub twin_ratio: f64,
    pub sentinel_band: [f64; 2],
    pub perturb_scale: f64,
    pub rf: ForestParams,
    pub gbdt: GbdtParams,
    pub adt_max_depth: usize,
    /// Minimum leaf size as a multiple of k.
    pub min_leaf_factor: usize,
    pub bootstrap_resamples: usize,
    pub delta: f64,
    pub blind_seed: u64,
    pub k_sweep: Vec<usize>,
    pub seed: u64,
    /// Rows used by the one-time epsilon calibration.
    pub calibration_rows: usize,
    /// Relative headroom added to the honest maximum during calibration.
    pub calibration_margin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 5,
            epsilon: 0.45,
            shap_subsample: 2000,
            sentinel_ratio: 0.02,
            twin_ratio: 0.05,
            sentinel_band: [0.45, 0.55],
            perturb_scale: 0.05,
            rf: ForestParams::default(),
            gbdt: GbdtParams::default(),
            adt_max_depth: 50,
            min_leaf_factor: 2,
            bootstrap_resamples: 10_000,
            delta: 0.05,
            blind_seed: 99,
            k_sweep: vec![2, 3, 4, 5, 7, 10, 12, 15, 20, 25, 30],
            seed: 42,
            calibration_rows: 1000,
            calibration_margin: 0.1,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.k >= 2, || format!("k must be >= 2, got {}", self.k))?;
        check(self.epsilon > 0.0 && !self.epsilon.is_nan(), || {
            format!("epsilon must be positive, got {}", self.epsilon)
        })?;
        check(self.shap_subsample >= 10, || {
            "shap_subsample must be >= 10".into()
        })?;
        check(
            self.sentinel_ratio > 0.0 && self.sentinel_ratio < 1.0,
            || "sentinel_ratio must lie in (0, 1)".into(),
        )?;
        check(self.twin_ratio > 0.0 && self.twin_ratio < 1.0, || {
            "twin_ratio must lie in (0, 1)".into()
        })?;
        let [lo, hi] = self.sentinel_band;
        check(
            (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi,
            || format!("sentinel_band [{lo}, {hi}] must be an ordered sub-interval of [0, 1]"),
        )?;
        check(
            self.perturb_scale >= 0.0 && self.perturb_scale.is_finite(),
            || "perturb_scale must be non-negative".into(),
        )?;
        check(self.rf.n_trees >= 1 && self.rf.max_depth >= 1, || {
            "rf needs >= 1 tree of depth >= 1".into()
        })?;
        check(
            self.gbdt.n_estimators >= 1
                && self.gbdt.max_depth >= 1
                && self.gbdt.learning_rate > 0.0
                && self.gbdt.lambda >= 0.0
                && self.gbdt.min_child_weight >= 0.0,
            || "gbdt parameters out of range".into(),
        )?;
        check(self.adt_max_depth >= 1, || {
            "adt_max_depth must be >= 1".into()
        })?;
        check(self.min_leaf_factor == 2, || {
            "min_leaf_factor is fixed at 2 (leaves hold at least 2k rows)".into()
        })?;
        check(self.bootstrap_resamples >= 1000, || {
            "bootstrap_resamples must be >= 1000".into()
        })?;
        check(self.delta > 0.0 && self.delta < 1.0, || {
            "delta must lie in (0, 1)".into()
        })?;
        check(
            !self.k_sweep.is_empty() && self.k_sweep.iter().all(|&k| k >= 2),
            || "k_sweep must be non-empty with every k >= 2".into(),
        )?;
        check(self.calibration_rows >= 20, || {
            "calibration_rows must be >= 20".into()
        })?;
        check(self.calibration_margin >= 0.0, || {
            "calibration_margin must be >= 0".into()
        })?;
        Ok(())
    }

    pub fn fingerprint_params(&self) -> FingerprintParams {
        FingerprintParams {
            subsample: self.shap_subsample,
            gbdt: self.gbdt,
        }
    }

    pub fn sentinel_params(&self) -> SentinelParams {
        SentinelParams {
            band: (self.sentinel_band[0], self.sentinel_band[1]),
            perturb_scale: self.perturb_scale,
            ratio: self.sentinel_ratio,
        }
    }
}
