//! Client-side trap preparation: boundary sentinels, exact-duplicate twins,
//! salted tracker ids, and assembly of the outsourced dataset.
//!
//! The [`TrapManifest`] is client-confidential. No cloud-side operation in
//! this crate accepts it.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, seeded_permutation, ColumnKind, Schema, Table};
use crate::error::{Error, Result};
use crate::fingerprint::ShapFingerprint;
use crate::models::{fit_forest_with, ForestModel, ForestParams};
use crate::util::{canonical_f64, seeded_rng, sha256_hex};

/// Salted SHA-256 record identifier, 64 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TrackerId(String);

impl TrackerId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TrackerId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TrackerId> for String {
    fn from(t: TrackerId) -> String {
        t.0
    }
}

impl std::str::FromStr for TrackerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ok = s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if ok {
            Ok(TrackerId(s.to_string()))
        } else {
            Err(Error::InvalidArgument(format!(
                "`{s}` is not a 64-char lowercase hex digest"
            )))
        }
    }
}

impl fmt::Display for TrackerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Genuine,
    Sentinel,
    Twin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Genuine => "genuine",
            Role::Sentinel => "sentinel",
            Role::Twin => "twin",
        }
    }
}

/// Canonical feature rendering: six-decimal values joined by commas.
pub fn canonical_features(row: &[f64]) -> String {
    row.iter()
        .map(|v| canonical_f64(*v))
        .collect::<Vec<_>>()
        .join(",")
}

/// `SHA-256(salt | role | index | features)` with ASCII `|` separators.
pub fn compute_tracker_id(salt: &[u8], role: Role, index: usize, features: &[f64]) -> TrackerId {
    let mut pre = Vec::with_capacity(salt.len() + 64 + features.len() * 12);
    pre.extend_from_slice(salt);
    pre.push(b'|');
    pre.extend_from_slice(role.as_str().as_bytes());
    pre.push(b'|');
    pre.extend_from_slice(index.to_string().as_bytes());
    pre.push(b'|');
    pre.extend_from_slice(canonical_features(features).as_bytes());
    TrackerId(sha256_hex(&pre))
}

/// Sentinel generation output. `rows` are full table rows (target included).
#[derive(Debug, Clone, PartialEq)]
pub struct Sentinels {
    pub rows: Vec<Vec<f64>>,
    /// Source row index in the genuine table for each sentinel.
    pub sources: Vec<usize>,
    /// Number of records whose forest probability fell inside the band.
    pub boundary_candidates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentinelParams {
    pub band: (f64, f64),
    pub perturb_scale: f64,
    pub ratio: f64,
}

impl Default for SentinelParams {
    fn default() -> Self {
        Self {
            band: (0.45, 0.55),
            perturb_scale: 0.05,
            ratio: 0.02,
        }
    }
}

impl SentinelParams {
    pub fn max_count(&self, n: usize) -> usize {
        ((self.ratio * n as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

/// Fits the boundary-scoring forest on a 10% stratified subsample of `d`.
pub fn fit_boundary_forest(d: &Table, params: ForestParams, seed: u64) -> Result<ForestModel> {
    let n_sub = ((d.n_rows() as f64) * 0.1).round().max(10.0) as usize;
    let sub = dataset::stratified_subsample(d, n_sub.min(d.n_rows()), seed)?;
    fit_forest_with(&sub, params, seed)
}

/// Picks up to `max_count` records with forest probability inside the band
/// and perturbs their numeric quasi-identifiers with clipped Gaussian noise
/// of scale `perturb_scale * sigma_j`. Categorical columns and the target are
/// copied; integer columns are rounded after clipping.
pub fn generate_sentinels(
    d: &Table,
    forest: &ForestModel,
    max_count: usize,
    params: &SentinelParams,
    seed: u64,
) -> Sentinels {
    let (lo, hi) = params.band;
    let candidates: Vec<usize> = (0..d.n_rows())
        .filter(|&i| {
            let p = forest.predict_proba(&d.features(i));
            p >= lo && p <= hi
        })
        .collect();
    let mut rng = seeded_rng(seed, "sentinels");
    let mut sources: Vec<usize> = if candidates.len() > max_count {
        candidates
            .choose_multiple(&mut rng, max_count)
            .copied()
            .collect()
    } else {
        candidates.clone()
    };
    sources.sort_unstable();

    let schema = d.schema();
    let numeric: Vec<(usize, ColumnKind, f64, f64, f64)> = schema
        .qi_indices()
        .into_iter()
        .filter(|&c| schema.columns()[c].kind != ColumnKind::Categorical)
        .map(|c| {
            let col = d.column(c);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (c, schema.columns()[c].kind, sd, min, max)
        })
        .collect();

    let rows = sources
        .iter()
        .map(|&src| {
            let mut row = d.rows()[src].clone();
            for &(c, kind, sd, min, max) in &numeric {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mut v = (row[c] + z * params.perturb_scale * sd).clamp(min, max);
                if kind == ColumnKind::Integer {
                    v = v.round();
                }
                row[c] = v;
            }
            row
        })
        .collect();
    Sentinels {
        rows,
        sources,
        boundary_candidates: candidates.len(),
    }
}

/// Selects `floor(rate * N)` genuine rows uniformly at random and duplicates them.
pub fn generate_twins(d: &Table, rate: f64, seed: u64) -> Result<Vec<(usize, Vec<f64>)>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "twin rate must lie in (0, 1], got {rate}"
        )));
    }
    let count = ((rate * d.n_rows() as f64) + 1e-9).floor() as usize;
    let all: Vec<usize> = (0..d.n_rows()).collect();
    let mut picked: Vec<usize> = all
        .choose_multiple(&mut seeded_rng(seed, "twins"), count)
        .copied()
        .collect();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| (i, d.rows()[i].clone()))
        .collect())
}

/// The table the cloud receives: rows plus one tracker id each.
///
/// `roles` is the client's private record of which rows are traps; it is
/// never written out and is empty for datasets read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct OutsourcedDataset {
    pub table: Table,
    pub tracker_ids: Vec<TrackerId>,
    roles: Vec<Role>,
}

pub const TRACKER_ID_COLUMN: &str = "tracker_id";

impl OutsourcedDataset {
    pub fn new(table: Table, tracker_ids: Vec<TrackerId>) -> Result<Self> {
        if table.n_rows() != tracker_ids.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} rows but {} tracker ids",
                table.n_rows(),
                tracker_ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(tracker_ids.len());
        for id in &tracker_ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateTrackerId(id.to_string()));
            }
        }
        Ok(Self {
            table,
            tracker_ids,
            roles: Vec::new(),
        })
    }

    /// Genuine rows only, tagged with fresh tracker ids and no traps.
    pub fn untrapped(d: &Table, salt: &[u8]) -> Result<Self> {
        let (ds, _) = assemble_outsourced(d, &[], &[], salt, 0)?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    pub fn roles(&self) -> Option<&[Role]> {
        (!self.roles.is_empty()).then_some(self.roles.as_slice())
    }

    /// Copy of the rows at `indices`; client-side roles are carried along when known.
    pub fn select(&self, indices: &[usize]) -> OutsourcedDataset {
        OutsourcedDataset {
            table: self.table.select(indices),
            tracker_ids: indices
                .iter()
                .map(|&i| self.tracker_ids[i].clone())
                .collect(),
            roles: if self.roles.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.roles[i]).collect()
            },
        }
    }

    /// Writes the encoded rows with an appended `tracker_id` column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self
            .table
            .schema()
            .columns()
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        header.push(TRACKER_ID_COLUMN);
        w.write_record(&header)?;
        for (row, id) in self.table.rows().iter().zip(&self.tracker_ids) {
            let mut rec: Vec<String> = row.iter().map(|v| dataset::format_number(*v)).collect();
            rec.push(id.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let (table, ids) = dataset::read_encoded_csv(path, schema, TRACKER_ID_COLUMN)?;
        let ids = ids
            .into_iter()
            .map(TrackerId::try_from)
            .collect::<Result<Vec<_>>>()?;
        OutsourcedDataset::new(table, ids)
    }
}

/// Client-secret trap record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapManifest {
    #[serde(rename = "salt_hex", with = "hex_bytes")]
    pub salt: Vec<u8>,
    pub sentinel_ids: Vec<TrackerId>,
    /// original tracker id -> twin tracker id
    pub twin_pairs: BTreeMap<TrackerId, TrackerId>,
    pub xai_baseline: Option<ShapFingerprint>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

impl TrapManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrapManifest = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    /// Sentinels and twins must be disjoint and the twin map injective.
    pub fn validate(&self) -> Result<()> {
        let sentinels: HashSet<&TrackerId> = self.sentinel_ids.iter().collect();
        let mut twins = HashSet::new();
        for (orig, twin) in &self.twin_pairs {
            if sentinels.contains(orig) || sentinels.contains(twin) {
                return Err(Error::InvalidArgument(format!(
                    "tracker id {orig} is both a sentinel and a twin"
                )));
            }
            if !twins.insert(twin) {
                return Err(Error::InvalidArgument(format!("twin {twin} appears twice")));
            }
        }
        Ok(())
    }
}

/// Concatenates genuine → sentinel → twin rows, assigns tracker ids on the
/// final feature values using the concatenated position as index, and
/// shuffles the result with a seeded permutation.
pub fn assemble_outsourced(
    d: &Table,
    sentinels: &[Vec<f64>],
    twins: &[(usize, Vec<f64>)],
    salt: &[u8],
    seed: u64,
) -> Result<(OutsourcedDataset, TrapManifest)> {
    let n = d.n_rows();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + sentinels.len() + twins.len());
    let mut roles = Vec::with_capacity(rows.capacity());
    rows.extend(d.rows().iter().cloned());
    roles.extend(std::iter::repeat_n(Role::Genuine, n));
    rows.extend(sentinels.iter().cloned());
    roles.extend(std::iter::repeat_n(Role::Sentinel, sentinels.len()));
    rows.extend(twins.iter().map(|(_, r)| r.clone()));
    roles.extend(std::iter::repeat_n(Role::Twin, twins.len()));
    let table = d.with_rows(rows)?;

    let ids: Vec<TrackerId> = (0..table.n_rows())
        .map(|i| compute_tracker_id(salt, roles[i], i, &table.features(i)))
        .collect();
    let mut seen = HashSet::with_capacity(ids.len());
    for id in &ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateTrackerId(id.to_string()));
        }
    }

    let sentinel_ids = ids[n..n + sentinels.len()].to_vec();
    let mut twin_pairs = BTreeMap::new();
    for (k, (src, _)) in twins.iter().enumerate() {
        if *src >= n {
            return Err(Error::InvalidArgument(format!(
                "twin source {src} out of range"
            )));
        }
        twin_pairs.insert(ids[*src].clone(), ids[n + sentinels.len() + k].clone());
    }
    let manifest = TrapManifest {
        salt: salt.to_vec(),
        sentinel_ids,
        twin_pairs,
        xai_baseline: None,
    };
    manifest.validate()?;

    let perm = seeded_permutation(table.n_rows(), seed);
    let outsourced = OutsourcedDataset {
        table: table.select(&perm),
        tracker_ids: perm.iter().map(|&i| ids[i].clone()).collect(),
        roles: perm.iter().map(|&i| roles[i]).collect(),
    };
    Ok((outsourced, manifest))
}
