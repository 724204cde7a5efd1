//! Bottom-up node digests committing to every split and leaf bound.

use std::collections::BTreeMap;

use super::adt::AdtNode;
use crate::util::{canonical_f64, sha256_hex};

/// `name=min..max` entries in ascending name order, pipe-joined.
pub fn canonical_bounds(bounds: &BTreeMap<String, (f64, f64)>) -> String {
    bounds
        .iter()
        .map(|(name, (lo, hi))| format!("{name}={}..{}", canonical_f64(*lo), canonical_f64(*hi)))
        .collect::<Vec<_>>()
        .join("|")
}

pub fn hash_leaf(count: usize, bounds: &BTreeMap<String, (f64, f64)>) -> String {
    sha256_hex(format!("LEAF|{count}|{}", canonical_bounds(bounds)).as_bytes())
}

pub fn hash_internal(feature: &str, split_value: f64, h_left: &str, h_right: &str) -> String {
    sha256_hex(
        format!(
            "INTERNAL|{feature}|{}|{h_left}|{h_right}",
            canonical_f64(split_value)
        )
        .as_bytes(),
    )
}

pub fn node_hash(node: &AdtNode) -> String {
    match node {
        AdtNode::Leaf { count, bounds } => hash_leaf(*count, bounds),
        AdtNode::Internal {
            feature,
            split_value,
            left,
            right,
        } => hash_internal(feature, *split_value, &node_hash(left), &node_hash(right)),
    }
}

pub fn compute_root_hash(tree: &AdtNode) -> String {
    node_hash(tree)
}
