//! Simulated cloud profiles: honest, lazy (drops rows), dumb (blind tree and
//! fabricated hash) and approximate (blind tree, genuine hash).

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::anonymizer::{
    anonymize_with_tree, build_tree, AdtParams, AnonymizationResult, SplitChooser,
    DEFAULT_MAX_DEPTH,
};
use crate::error::{Error, Result};
use crate::traps::OutsourcedDataset;
use crate::util::{seeded_rng, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Honest,
    Lazy,
    Dumb,
    Approximate,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 4] = [
        ProfileKind::Honest,
        ProfileKind::Lazy,
        ProfileKind::Dumb,
        ProfileKind::Approximate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::Honest => "honest",
            ProfileKind::Lazy => "lazy",
            ProfileKind::Dumb => "dumb",
            ProfileKind::Approximate => "approximate",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProfileKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown adversary '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudProfile {
    pub kind: ProfileKind,
    pub drop_fraction: f64,
    pub blind_seed: u64,
    /// Seed for the lazy profile's row selection.
    pub drop_seed: u64,
    pub max_depth: usize,
}

impl CloudProfile {
    pub fn new(kind: ProfileKind) -> Self {
        Self {
            kind,
            drop_fraction: 0.05,
            blind_seed: 99,
            drop_seed: 42,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ProfileKind::Lazy && !(self.drop_fraction > 0.0 && self.drop_fraction < 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "drop fraction must lie in (0, 1), got {}",
                self.drop_fraction
            )));
        }
        Ok(())
    }

    fn adt(&self) -> AdtParams {
        AdtParams {
            max_depth: self.max_depth,
        }
    }
}

pub fn run_honest(
    d: &OutsourcedDataset,
    k: usize,
    profile: &CloudProfile,
) -> Result<AnonymizationResult> {
    let tree = build_tree(&d.table, k, profile.adt(), &mut SplitChooser::TargetDriven)?;
    anonymize_with_tree(d, tree)
}

/// Number of rows the lazy profile discards.
pub fn lazy_drop_count(n: usize, drop_fraction: f64) -> usize {
    (n as f64 * drop_fraction + 1e-9).floor() as usize
}

/// Drops `floor(delta * n)` uniformly chosen rows, then runs the honest pipeline.
pub fn run_lazy(
    d: &OutsourcedDataset,
    k: usize,
    profile: &CloudProfile,
) -> Result<AnonymizationResult> {
    profile.validate()?;
    let n = d.n_rows();
    let drop = lazy_drop_count(n, profile.drop_fraction);
    let mut rng = seeded_rng(profile.drop_seed, "lazy-drop");
    let mut dropped = vec![false; n];
    for i in sample(&mut rng, n, drop) {
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
    run_honest(&d.select(&keep), k, profile)
}

/// Blind tree with a fabricated root hash (digest of a seeded nonce).
pub fn run_dumb(
    d: &OutsourcedDataset,
    k: usize,
    profile: &CloudProfile,
) -> Result<AnonymizationResult> {
    let mut result = run_approximate(d, k, profile)?;
    let mut nonce = [0u8; 32];
    seeded_rng(profile.blind_seed, "fake-root").fill_bytes(&mut nonce);
    result.root_hash = sha256_hex(&nonce);
    Ok(result)
}

/// Blind tree with its genuine root hash.
pub fn run_approximate(
    d: &OutsourcedDataset,
    k: usize,
    profile: &CloudProfile,
) -> Result<AnonymizationResult> {
    let tree = build_tree(
        &d.table,
        k,
        profile.adt(),
        &mut SplitChooser::blind(profile.blind_seed),
    )?;
    anonymize_with_tree(d, tree)
}

pub fn run_profile(
    d: &OutsourcedDataset,
    k: usize,
    profile: &CloudProfile,
) -> Result<AnonymizationResult> {
    profile.validate()?;
    match profile.kind {
        ProfileKind::Honest => run_honest(d, k, profile),
        ProfileKind::Lazy => run_lazy(d, k, profile),
        ProfileKind::Dumb => run_dumb(d, k, profile),
        ProfileKind::Approximate => run_approximate(d, k, profile),
    }
}
