//! Cloud-side honest protocol: tree construction, leaf generalization,
//! leaf assignment, midpoint flattening and the authenticated output bundle.

mod adt;
mod merkle;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adt::{
    best_split, build_adt, build_blind_adt, build_tree, variance_reduction, AdtNode, AdtParams,
    Candidate, SplitChooser, DEFAULT_MAX_DEPTH,
};
pub use merkle::{canonical_bounds, compute_root_hash, hash_internal, hash_leaf, node_hash};

use crate::dataset::{self, ColumnKind, ColumnSpec, Schema, Table};
use crate::error::{Error, Result};
use crate::traps::{OutsourcedDataset, TrackerId, TRACKER_ID_COLUMN};

pub type LeafMap = BTreeMap<TrackerId, u32>;

/// Pre-order entry of the serialized tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum FlatNode {
    Internal {
        feature: String,
        split_value: f64,
    },
    Leaf {
        count: usize,
        bounds: BTreeMap<String, [f64; 2]>,
    },
}

/// Deeper inputs are rejected while parsing instead of recursing further.
const MAX_PARSE_DEPTH: usize = 512;

impl AdtNode {
    fn flatten_into(&self, out: &mut Vec<FlatNode>) {
        match self {
            AdtNode::Internal {
                feature,
                split_value,
                left,
                right,
            } => {
                out.push(FlatNode::Internal {
                    feature: feature.clone(),
                    split_value: *split_value,
                });
                left.flatten_into(out);
                right.flatten_into(out);
            }
            AdtNode::Leaf { count, bounds } => out.push(FlatNode::Leaf {
                count: *count,
                bounds: bounds
                    .iter()
                    .map(|(k, (a, b))| (k.clone(), [*a, *b]))
                    .collect(),
            }),
        }
    }

    /// Pre-order node list as JSON.
    pub fn to_json(&self) -> Result<String> {
        let mut flat = Vec::new();
        self.flatten_into(&mut flat);
        Ok(serde_json::to_string_pretty(&flat)?)
    }

    pub fn from_json(s: &str) -> Result<AdtNode> {
        let flat: Vec<FlatNode> = serde_json::from_str(s)?;
        let mut pos = 0;
        let tree = rebuild(&flat, &mut pos, 0)?;
        if pos != flat.len() {
            return Err(Error::MalformedTree(format!(
                "{} trailing nodes after the root subtree",
                flat.len() - pos
            )));
        }
        Ok(tree)
    }
}

fn rebuild(flat: &[FlatNode], pos: &mut usize, depth: usize) -> Result<AdtNode> {
    if depth > MAX_PARSE_DEPTH {
        return Err(Error::MalformedTree("tree too deep".into()));
    }
    let node = flat
        .get(*pos)
        .ok_or_else(|| Error::MalformedTree("truncated node list".into()))?;
    *pos += 1;
    Ok(match node {
        FlatNode::Leaf { count, bounds } => AdtNode::Leaf {
            count: *count,
            bounds: bounds
                .iter()
                .map(|(k, [a, b])| (k.clone(), (*a, *b)))
                .collect(),
        },
        FlatNode::Internal {
            feature,
            split_value,
        } => {
            let left = rebuild(flat, pos, depth + 1)?;
            let right = rebuild(flat, pos, depth + 1)?;
            AdtNode::Internal {
                feature: feature.clone(),
                split_value: *split_value,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    })
}

/// Pre-order array form of a tree for routing rows: the left child of an
/// internal node is the next entry.
enum Route {
    Split {
        feature: usize,
        value: f64,
        right: usize,
    },
    Leaf(u32),
}

fn compile(
    node: &AdtNode,
    names: &[String],
    out: &mut Vec<Route>,
    next_leaf: &mut u32,
) -> Result<()> {
    match node {
        AdtNode::Leaf { .. } => {
            out.push(Route::Leaf(*next_leaf));
            *next_leaf += 1;
        }
        AdtNode::Internal {
            feature,
            split_value,
            left,
            right,
        } => {
            let j = names
                .iter()
                .position(|n| n == feature)
                .ok_or_else(|| Error::FeatureMismatch(feature.clone()))?;
            let slot = out.len();
            out.push(Route::Split {
                feature: j,
                value: *split_value,
                right: 0,
            });
            compile(left, names, out, next_leaf)?;
            let r = out.len();
            if let Route::Split { right, .. } = &mut out[slot] {
                *right = r;
            }
            compile(right, names, out, next_leaf)?;
        }
    }
    Ok(())
}

/// Leaf id (pre-order numbering) per row, in row order; `<=` goes left.
fn row_leaf_ids(tree: &AdtNode, d: &OutsourcedDataset) -> Result<Vec<u32>> {
    let names = d.table.schema().qi_names();
    let mut routes = Vec::new();
    compile(tree, &names, &mut routes, &mut 0)?;
    Ok((0..d.n_rows())
        .map(|i| {
            let x = d.table.features(i);
            let mut at = 0;
            loop {
                match routes[at] {
                    Route::Leaf(id) => return id,
                    Route::Split {
                        feature,
                        value,
                        right,
                    } => {
                        at = if x[feature] <= value { at + 1 } else { right };
                    }
                }
            }
        })
        .collect())
}

pub fn assign_leaves(tree: &AdtNode, d: &OutsourcedDataset) -> Result<LeafMap> {
    let ids = row_leaf_ids(tree, d)?;
    Ok(d.tracker_ids.iter().cloned().zip(ids).collect())
}

/// Rows whose QI cells are (min, max) ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizedTable {
    pub schema: Schema,
    pub tracker_ids: Vec<TrackerId>,
    /// One range per QI column (schema QI order) per row.
    pub ranges: Vec<Vec<(f64, f64)>>,
    pub targets: Vec<u8>,
}

impl AnonymizedTable {
    pub fn n_rows(&self) -> usize {
        self.ranges.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self
            .schema
            .columns()
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        header.push(TRACKER_ID_COLUMN);
        w.write_record(&header)?;
        let ti = self.schema.target_index();
        for ((ranges, y), id) in self.ranges.iter().zip(&self.targets).zip(&self.tracker_ids) {
            let mut rec = Vec::with_capacity(header.len());
            let mut q = ranges.iter();
            for c in 0..self.schema.len() {
                if c == ti {
                    rec.push(y.to_string());
                } else {
                    let (lo, hi) = q.next().expect("range per QI column");
                    rec.push(format!(
                        "{}..{}",
                        dataset::format_number(*lo),
                        dataset::format_number(*hi)
                    ));
                }
            }
            rec.push(id.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut expected: Vec<String> = schema.columns().iter().map(|c| c.name.clone()).collect();
        expected.push(TRACKER_ID_COLUMN.to_string());
        if header != expected {
            return Err(Error::SchemaMismatch(format!(
                "anonymized header {header:?} does not match schema"
            )));
        }
        let ti = schema.target_index();
        let mut out = AnonymizedTable {
            schema: schema.clone(),
            tracker_ids: Vec::new(),
            ranges: Vec::new(),
            targets: Vec::new(),
        };
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |c: usize, message: String| Error::Parse {
                row,
                column: header[c].clone(),
                message,
            };
            let mut ranges = Vec::with_capacity(schema.len() - 1);
            for c in 0..schema.len() {
                let cell = rec.get(c).unwrap_or("").trim();
                if c == ti {
                    match cell {
                        "0" => out.targets.push(0),
                        "1" => out.targets.push(1),
                        _ => return Err(parse_err(c, format!("target '{cell}'"))),
                    }
                } else {
                    let (a, b) = cell
                        .split_once("..")
                        .ok_or_else(|| parse_err(c, format!("expected min..max, got '{cell}'")))?;
                    let lo: f64 = a
                        .parse()
                        .map_err(|_| parse_err(c, format!("bad number '{a}'")))?;
                    let hi: f64 = b
                        .parse()
                        .map_err(|_| parse_err(c, format!("bad number '{b}'")))?;
                    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                        return Err(parse_err(c, format!("invalid range '{cell}'")));
                    }
                    ranges.push((lo, hi));
                }
            }
            let id = rec.get(schema.len()).unwrap_or("").to_string();
            out.tracker_ids.push(TrackerId::try_from(id)?);
            out.ranges.push(ranges);
        }
        Ok(out)
    }
}

/// Replaces every range by its midpoint. QI columns become continuous since
/// midpoints of integer or categorical codes may be half-integral.
pub fn flatten_midpoints(a: &AnonymizedTable) -> Result<Table> {
    let cols: Vec<ColumnSpec> = a
        .schema
        .columns()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == a.schema.target_index() {
                c.clone()
            } else {
                ColumnSpec::qi(c.name.clone(), ColumnKind::Continuous)
            }
        })
        .collect();
    let schema = Schema::new(cols)?;
    let features: Vec<Vec<f64>> = a
        .ranges
        .iter()
        .map(|r| r.iter().map(|(lo, hi)| (lo + hi) / 2.0).collect())
        .collect();
    Table::from_features(schema, &features, &a.targets)
}

/// The three objects returned to the client, plus the anonymized rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizationResult {
    pub anonymized: AnonymizedTable,
    pub leaf_map: LeafMap,
    pub root_hash: String,
    pub tree: AdtNode,
}

/// Generalizes `d` with an already-built tree: each row's QI cells become
/// its leaf's bounds.
pub fn anonymize_with_tree(d: &OutsourcedDataset, tree: AdtNode) -> Result<AnonymizationResult> {
    let ids = row_leaf_ids(&tree, d)?;
    let names = d.table.schema().qi_names();
    let leaf_ranges: Vec<Vec<(f64, f64)>> = tree
        .leaves()
        .into_iter()
        .map(|l| match l {
            AdtNode::Leaf { bounds, .. } => names.iter().map(|n| bounds[n]).collect(),
            AdtNode::Internal { .. } => unreachable!(),
        })
        .collect();
    let anonymized = AnonymizedTable {
        schema: d.table.schema().clone(),
        tracker_ids: d.tracker_ids.clone(),
        ranges: ids
            .iter()
            .map(|&l| leaf_ranges[l as usize].clone())
            .collect(),
        targets: d.table.targets(),
    };
    let leaf_map = d.tracker_ids.iter().cloned().zip(ids).collect();
    let root_hash = compute_root_hash(&tree);
    Ok(AnonymizationResult {
        anonymized,
        leaf_map,
        root_hash,
        tree,
    })
}

/// Honest target-driven anonymization of the received dataset.
pub fn anonymize(d: &OutsourcedDataset, k: usize) -> Result<AnonymizationResult> {
    let tree = build_adt(&d.table, k)?;
    anonymize_with_tree(d, tree)
}

pub const BUNDLE_ANONYMIZED: &str = "anonymized.csv";
pub const BUNDLE_LEAF_MAP: &str = "leaf_map.json";
pub const BUNDLE_TREE: &str = "tree.json";
pub const BUNDLE_ROOT_HASH: &str = "root_hash.txt";
pub const BUNDLE_SCHEMA: &str = "schema.json";

impl AnonymizationResult {
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.anonymized.write_csv(dir.join(BUNDLE_ANONYMIZED))?;
        fs::write(
            dir.join(BUNDLE_LEAF_MAP),
            serde_json::to_string_pretty(&self.leaf_map)?,
        )?;
        fs::write(dir.join(BUNDLE_TREE), self.tree.to_json()?)?;
        fs::write(dir.join(BUNDLE_ROOT_HASH), format!("{}\n", self.root_hash))?;
        fs::write(
            dir.join(BUNDLE_SCHEMA),
            serde_json::to_string_pretty(&self.anonymized.schema)?,
        )?;
        Ok(())
    }

    pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let schema: Schema = serde_json::from_str(&fs::read_to_string(dir.join(BUNDLE_SCHEMA))?)?;
        let anonymized = AnonymizedTable::read_csv(dir.join(BUNDLE_ANONYMIZED), &schema)?;
        let leaf_map: LeafMap =
            serde_json::from_str(&fs::read_to_string(dir.join(BUNDLE_LEAF_MAP))?)?;
        let tree = AdtNode::from_json(&fs::read_to_string(dir.join(BUNDLE_TREE))?)?;
        let root_hash = fs::read_to_string(dir.join(BUNDLE_ROOT_HASH))?
            .trim()
            .to_string();
        if root_hash.len() != 64 || !root_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::InvalidArgument(format!(
                "root hash '{root_hash}' is not 64 hex digits"
            )));
        }
        Ok(Self {
            anonymized,
            leaf_map,
            root_hash: root_hash.to_ascii_lowercase(),
            tree,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use rand::Rng;

    fn outsourced(n: usize, seed: u64) -> OutsourcedDataset {
        let schema = Schema::new(vec![
            ColumnSpec::qi("age", ColumnKind::Integer),
            ColumnSpec::qi("income", ColumnKind::Continuous),
            ColumnSpec::qi("job", ColumnKind::Categorical),
            ColumnSpec::target("y"),
        ])
        .unwrap();
        let mut rng = seeded_rng(seed, "anon-test");
        let rows = (0..n)
            .map(|_| {
                let age = rng.gen_range(18..80) as f64;
                let income: f64 = rng.gen_range(-5.0..5.0);
                let job = rng.gen_range(0..4) as f64;
                let y = (age > 45.0 && rng.gen_bool(0.8)) || rng.gen_bool(0.1);
                vec![age, income, job, f64::from(y as u8)]
            })
            .collect();
        OutsourcedDataset::untrapped(&Table::new(schema, rows).unwrap(), b"salt").unwrap()
    }

    #[test]
    fn leaf_map_matches_build_partition() {
        let d = outsourced(500, 1);
        let r = anonymize(&d, 5).unwrap();
        assert_eq!(r.leaf_map.len(), 500);
        let mut per_leaf = vec![0usize; r.tree.n_leaves()];
        for &l in r.leaf_map.values() {
            per_leaf[l as usize] += 1;
        }
        assert_eq!(per_leaf, r.tree.leaf_counts());
        assert_eq!(r.root_hash, compute_root_hash(&r.tree));
    }

    #[test]
    fn single_leaf_maps_everything_to_zero() {
        let d = outsourced(15, 2);
        let r = anonymize(&d, 5).unwrap();
        assert!(r.tree.is_leaf());
        assert!(r.leaf_map.values().all(|&l| l == 0));
    }

    #[test]
    fn identical_rows_share_a_leaf() {
        let d = outsourced(400, 3);
        let r = anonymize(&d, 5).unwrap();
        let ids = row_leaf_ids(&r.tree, &d).unwrap();
        for i in 0..d.n_rows() {
            for j in (i + 1)..d.n_rows() {
                if d.table.features(i) == d.table.features(j) {
                    assert_eq!(ids[i], ids[j]);
                }
            }
        }
    }

    #[test]
    fn ranges_contain_original_values() {
        let d = outsourced(300, 4);
        let r = anonymize(&d, 5).unwrap();
        for i in 0..d.n_rows() {
            for (v, (lo, hi)) in d.table.features(i).iter().zip(&r.anonymized.ranges[i]) {
                assert!(lo <= v && v <= hi);
            }
        }
    }

    #[test]
    fn midpoints() {
        let schema = Schema::new(vec![
            ColumnSpec::qi("a", ColumnKind::Integer),
            ColumnSpec::target("y"),
        ])
        .unwrap();
        let id = |s: &str| TrackerId::try_from(crate::util::sha256_hex(s.as_bytes())).unwrap();
        let a = AnonymizedTable {
            schema,
            tracker_ids: vec![id("a"), id("b"), id("c")],
            ranges: vec![vec![(2.0, 4.0)], vec![(7.0, 7.0)], vec![(1.0, 2.0)]],
            targets: vec![0, 1, 0],
        };
        let t = flatten_midpoints(&a).unwrap();
        assert_eq!(t.column(0), vec![3.0, 7.0, 1.5]);
        assert_eq!(t.targets(), vec![0, 1, 0]);
    }

    #[test]
    fn tree_json_round_trip() {
        let d = outsourced(600, 5);
        let r = anonymize(&d, 3).unwrap();
        let json = r.tree.to_json().unwrap();
        let back = AdtNode::from_json(&json).unwrap();
        assert_eq!(back, r.tree);
        assert_eq!(compute_root_hash(&back), r.root_hash);
    }

    #[test]
    fn malformed_tree_json() {
        let truncated = r#"[{"type":"internal","feature":"a","split_value":1.0},
            {"type":"leaf","count":3,"bounds":{"a":[0.0,1.0]}}]"#;
        assert!(matches!(
            AdtNode::from_json(truncated),
            Err(Error::MalformedTree(_))
        ));
        let trailing = r#"[{"type":"leaf","count":3,"bounds":{"a":[0.0,1.0]}},
            {"type":"leaf","count":3,"bounds":{"a":[0.0,1.0]}}]"#;
        assert!(matches!(
            AdtNode::from_json(trailing),
            Err(Error::MalformedTree(_))
        ));
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = outsourced(400, 6);
        let r = anonymize(&d, 5).unwrap();
        r.write_bundle(dir.path()).unwrap();
        let back = AnonymizationResult::read_bundle(dir.path()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let d = outsourced(700, 7);
        assert_eq!(
            anonymize(&d, 5).unwrap().root_hash,
            anonymize(&d, 5).unwrap().root_hash
        );
    }
}
