//! Typed tabular data: schema, CSV ingestion, imputation, ordinal encoding,
//! stratified sampling and seeded shuffling.
//!
//! A [`Table`] is always fully numeric. Categorical columns carry their label
//! dictionary in the schema; codes are assigned in ascending lexicographic
//! label order so encodings are identical across runs and platforms.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{median_of_sorted, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Integer,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    QuasiIdentifier,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
    /// Label dictionary for categorical columns; `labels[code]` is the label.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
            labels: Vec::new(),
        }
    }

    pub fn qi(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self::new(name, kind, ColumnRole::QuasiIdentifier)
    }

    pub fn target(name: impl Into<String>) -> Self {
        Self::new(name, ColumnKind::Integer, ColumnRole::Target)
    }
}

/// Validated column list: unique names, exactly one target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ColumnSpec>", into = "Vec<ColumnSpec>")]
pub struct Schema {
    columns: Vec<ColumnSpec>,
    target: usize,
}

impl TryFrom<Vec<ColumnSpec>> for Schema {
    type Error = Error;

    fn try_from(columns: Vec<ColumnSpec>) -> Result<Self> {
        Schema::new(columns)
    }
}

impl From<Schema> for Vec<ColumnSpec> {
    fn from(s: Schema) -> Self {
        s.columns
    }
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            if let Some(prev) = seen.insert(c.name.as_str(), i) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate column name `{}` at positions {prev} and {i}",
                    c.name
                )));
            }
        }
        let targets: Vec<usize> = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Target)
            .map(|(i, _)| i)
            .collect();
        if targets.len() != 1 {
            return Err(Error::SchemaMismatch(format!(
                "expected exactly one target column, found {}",
                targets.len()
            )));
        }
        if columns.len() < 2 {
            return Err(Error::SchemaMismatch(
                "schema needs at least one quasi-identifier".into(),
            ));
        }
        Ok(Self {
            target: targets[0],
            columns,
        })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn target_name(&self) -> &str {
        &self.columns[self.target].name
    }

    /// Schema positions of the quasi-identifier columns, in schema order.
    pub fn qi_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| i != self.target)
            .collect()
    }

    pub fn qi_names(&self) -> Vec<String> {
        self.qi_indices()
            .into_iter()
            .map(|i| self.columns[i].name.clone())
            .collect()
    }

    pub fn qi_specs(&self) -> Vec<&ColumnSpec> {
        self.qi_indices()
            .into_iter()
            .map(|i| &self.columns[i])
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Position of `name` among the quasi-identifiers (feature-vector index).
    pub fn feature_index_of(&self, name: &str) -> Option<usize> {
        self.qi_indices()
            .iter()
            .position(|&i| self.columns[i].name == name)
    }
}

/// A fully numeric table. Each row holds one value per schema column,
/// the target included at `schema.target_index()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Schema,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<f64>>) -> Result<Self> {
        let t = schema.target_index();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "row {r} has {} cells, schema has {} columns",
                    row.len(),
                    schema.len()
                )));
            }
            for (c, (v, spec)) in row.iter().zip(schema.columns()).enumerate() {
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: r,
                        column: spec.name.clone(),
                        message: "non-finite value".into(),
                    });
                }
                let whole = v.fract() == 0.0;
                let bad = match spec.kind {
                    _ if c == t => !(*v == 0.0 || *v == 1.0),
                    ColumnKind::Integer => !whole,
                    ColumnKind::Categorical => !whole || *v < 0.0,
                    ColumnKind::Continuous => false,
                };
                if bad {
                    let message = if c == t {
                        "target must be 0 or 1".to_string()
                    } else {
                        format!("value {v} invalid for {:?} column", spec.kind)
                    };
                    return Err(Error::Parse {
                        row: r,
                        column: spec.name.clone(),
                        message,
                    });
                }
            }
        }
        Ok(Self { schema, rows })
    }

    /// Builds a table from QI feature vectors and 0/1 targets.
    pub fn from_features(schema: Schema, features: &[Vec<f64>], targets: &[u8]) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::SchemaMismatch(
                "feature and target counts differ".into(),
            ));
        }
        let qi = schema.qi_indices();
        let rows = features
            .iter()
            .zip(targets)
            .map(|(f, &y)| {
                let mut row = vec![0.0; schema.len()];
                for (slot, v) in qi.iter().zip(f) {
                    row[*slot] = *v;
                }
                row[schema.target_index()] = f64::from(y);
                row
            })
            .collect();
        Table::new(schema, rows)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn target(&self, row: usize) -> u8 {
        self.rows[row][self.schema.target_index()] as u8
    }

    pub fn targets(&self) -> Vec<u8> {
        (0..self.n_rows()).map(|i| self.target(i)).collect()
    }

    /// QI feature vector of `row` (target removed).
    pub fn features(&self, row: usize) -> Vec<f64> {
        let t = self.schema.target_index();
        self.rows[row]
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != t)
            .map(|(_, v)| *v)
            .collect()
    }

    pub fn feature_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.features(i)).collect()
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[col]).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0usize; 2];
        for i in 0..self.n_rows() {
            c[self.target(i) as usize] += 1;
        }
        c
    }

    /// New table with the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn with_rows(&self, rows: Vec<Vec<f64>>) -> Result<Table> {
        Table::new(self.schema.clone(), rows)
    }

    /// Writes the table as CSV with categorical codes rendered as labels.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            let rec: Vec<String> = row
                .iter()
                .zip(self.schema.columns())
                .map(|(v, spec)| match spec.kind {
                    ColumnKind::Categorical if !spec.labels.is_empty() => spec
                        .labels
                        .get(*v as usize)
                        .cloned()
                        .unwrap_or_else(|| format_number(*v)),
                    _ => format_number(*v),
                })
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal rendering; whole numbers print without a fraction.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        let mut s = String::new();
        let _ = write!(s, "{}", v as i64);
        s
    } else {
        format!("{v}")
    }
}

/// Cells as read from a CSV file, before imputation and encoding.
/// `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    pub cells: Vec<Vec<Option<String>>>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "?"
}

impl RawTable {
    /// Reads a CSV whose header names exactly the schema columns (in any order).
    pub fn read_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path.as_ref())?;
        let header: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let position = header_positions(&header, schema)?;
        let mut cells = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::SchemaMismatch(format!(
                    "row {r} has {} fields, header has {}",
                    rec.len(),
                    header.len()
                )));
            }
            let row = position
                .iter()
                .map(|&p| {
                    let cell = &rec[p];
                    (!is_missing(cell)).then(|| cell.trim().to_string())
                })
                .collect();
            cells.push(row);
        }
        Ok(Self {
            schema: schema.clone(),
            cells,
        })
    }

    /// Fills missing cells: column mode for categorical columns (ties broken
    /// by smallest label), column median for numeric columns.
    pub fn impute(mut self) -> Result<Self> {
        for (c, spec) in self.schema.columns().iter().enumerate() {
            if self.cells.iter().all(|r| r[c].is_some()) {
                continue;
            }
            let fill = match spec.kind {
                ColumnKind::Categorical => {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for r in &self.cells {
                        if let Some(v) = &r[c] {
                            *counts.entry(v.as_str()).or_default() += 1;
                        }
                    }
                    let mut best: Option<(&str, usize)> = None;
                    for (label, n) in counts {
                        if best.is_none_or(|(_, b)| n > b) {
                            best = Some((label, n));
                        }
                    }
                    best.map(|(l, _)| l.to_string())
                }
                ColumnKind::Continuous | ColumnKind::Integer => {
                    let mut vals = Vec::new();
                    for (r, row) in self.cells.iter().enumerate() {
                        if let Some(v) = &row[c] {
                            vals.push(parse_numeric(v, r, spec)?);
                        }
                    }
                    if vals.is_empty() {
                        None
                    } else {
                        vals.sort_by(f64::total_cmp);
                        let mut m = median_of_sorted(&vals);
                        if spec.kind == ColumnKind::Integer {
                            m = m.round();
                        }
                        Some(format_number(m))
                    }
                }
            };
            let fill = fill.ok_or_else(|| {
                Error::SchemaMismatch(format!("column `{}` has no observed values", spec.name))
            })?;
            for row in &mut self.cells {
                if row[c].is_none() {
                    row[c] = Some(fill.clone());
                }
            }
        }
        Ok(self)
    }
}

fn header_positions(header: &[String], schema: &Schema) -> Result<Vec<usize>> {
    if header.len() != schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "header has {} columns, schema has {}",
            header.len(),
            schema.len()
        )));
    }
    schema
        .columns()
        .iter()
        .map(|c| {
            header.iter().position(|h| *h == c.name).ok_or_else(|| {
                Error::SchemaMismatch(format!("column `{}` missing from header", c.name))
            })
        })
        .collect()
}

fn parse_numeric(cell: &str, row: usize, spec: &ColumnSpec) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        row,
        column: spec.name.clone(),
        message: format!("`{cell}` is not a number"),
    })?;
    if !v.is_finite() || (spec.kind == ColumnKind::Integer && v.fract() != 0.0) {
        return Err(Error::Parse {
            row,
            column: spec.name.clone(),
            message: format!("`{cell}` is not a valid {:?} value", spec.kind),
        });
    }
    Ok(v)
}

/// Maps categorical labels to ordinal codes `0..m` in lexicographic label
/// order and parses every other column as a number. Missing cells must have
/// been imputed already.
pub fn encode_categoricals(raw: RawTable) -> Result<Table> {
    let mut schema_cols = raw.schema.columns().to_vec();
    let n_cols = schema_cols.len();
    let mut rows = vec![vec![0.0; n_cols]; raw.cells.len()];
    for (c, spec) in schema_cols.iter_mut().enumerate() {
        let missing = |r: usize| Error::Parse {
            row: r,
            column: spec.name.clone(),
            message: "missing value after imputation".into(),
        };
        match spec.kind {
            ColumnKind::Categorical => {
                let mut labels: Vec<String> = if spec.labels.is_empty() {
                    let mut all: Vec<String> =
                        raw.cells.iter().filter_map(|r| r[c].clone()).collect();
                    all.sort();
                    all.dedup();
                    all
                } else {
                    spec.labels.clone()
                };
                let lookup: HashMap<String, usize> = labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.clone(), i))
                    .collect();
                for (r, row) in raw.cells.iter().enumerate() {
                    let cell = row[c].as_ref().ok_or_else(|| missing(r))?;
                    let code = *lookup.get(cell).ok_or_else(|| Error::Parse {
                        row: r,
                        column: spec.name.clone(),
                        message: format!("unknown label `{cell}`"),
                    })?;
                    rows[r][c] = code as f64;
                }
                spec.labels = std::mem::take(&mut labels);
            }
            ColumnKind::Continuous | ColumnKind::Integer => {
                for (r, row) in raw.cells.iter().enumerate() {
                    let cell = row[c].as_ref().ok_or_else(|| missing(r))?;
                    rows[r][c] = parse_numeric(cell, r, spec)?;
                }
            }
        }
    }
    Table::new(Schema::new(schema_cols)?, rows)
}

/// Reads, imputes (at ingestion, over the full file) and encodes a CSV.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Table> {
    encode_categoricals(RawTable::read_csv(path, schema)?.impute()?)
}

/// Reads a CSV whose cells are already numeric codes (the outsourced form).
/// Extra columns named in `passthrough` are returned as strings.
pub fn read_encoded_csv(
    path: impl AsRef<Path>,
    schema: &Schema,
    passthrough: &str,
) -> Result<(Table, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let extra = header
        .iter()
        .position(|h| h == passthrough)
        .ok_or_else(|| {
            Error::SchemaMismatch(format!("column `{passthrough}` missing from header"))
        })?;
    let data_header: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != extra)
        .map(|(_, h)| h.clone())
        .collect();
    let pos = header_positions(&data_header, schema)?;
    let pos: Vec<usize> = pos
        .into_iter()
        .map(|p| if p >= extra { p + 1 } else { p })
        .collect();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(pos.len());
        for (spec, &p) in schema.columns().iter().zip(&pos) {
            let cell = rec
                .get(p)
                .ok_or_else(|| Error::SchemaMismatch(format!("row {r} is too short")))?;
            let numeric = ColumnSpec {
                kind: match spec.kind {
                    ColumnKind::Continuous => ColumnKind::Continuous,
                    _ => ColumnKind::Integer,
                },
                ..spec.clone()
            };
            row.push(parse_numeric(cell, r, &numeric)?);
        }
        ids.push(rec.get(extra).unwrap_or_default().to_string());
        rows.push(row);
    }
    Ok((Table::new(schema.clone(), rows)?, ids))
}

/// Per-class quotas summing to `n`: floor of the proportional share, with any
/// remainder row going to the majority class.
fn stratified_quota(counts: [usize; 2], n: usize) -> [usize; 2] {
    let total = counts[0] + counts[1];
    if total == 0 {
        return [0, 0];
    }
    let mut q = [counts[0] * n / total, counts[1] * n / total];
    let majority = if counts[1] > counts[0] { 1 } else { 0 };
    let mut remainder = n - q[0] - q[1];
    while remainder > 0 {
        let cls = if q[majority] < counts[majority] {
            majority
        } else {
            1 - majority
        };
        q[cls] += 1;
        remainder -= 1;
    }
    q
}

fn class_indices(t: &Table) -> [Vec<usize>; 2] {
    let mut idx = [Vec::new(), Vec::new()];
    for i in 0..t.n_rows() {
        idx[t.target(i) as usize].push(i);
    }
    idx
}

/// Stratified sample of `n` row indices, returned in ascending order.
pub fn stratified_indices(t: &Table, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > t.n_rows() {
        return Err(Error::InsufficientRows {
            requested: n,
            available: t.n_rows(),
        });
    }
    let by_class = class_indices(t);
    let quota = stratified_quota([by_class[0].len(), by_class[1].len()], n);
    let mut rng = seeded_rng(seed, "stratified-subsample");
    let mut chosen = Vec::with_capacity(n);
    for (cls, rows) in by_class.iter().enumerate() {
        chosen.extend(rows.choose_multiple(&mut rng, quota[cls]).copied());
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Class-stratified subsample of `n` rows (original row order kept).
pub fn stratified_subsample(t: &Table, n: usize, seed: u64) -> Result<Table> {
    Ok(t.select(&stratified_indices(t, n, seed)?))
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed, "shuffle"));
    idx
}

pub fn seeded_shuffle(t: &Table, seed: u64) -> Table {
    t.select(&seeded_permutation(t.n_rows(), seed))
}

/// Stratified split into `(train, test)`; `test` receives
/// `round(test_fraction * n)` rows allocated across classes.
pub fn train_test_split(t: &Table, test_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = (test_fraction * t.n_rows() as f64).round() as usize;
    let by_class = class_indices(t);
    let quota = stratified_quota([by_class[0].len(), by_class[1].len()], n_test);
    let mut rng = seeded_rng(seed, "train-test-split");
    let mut is_test = vec![false; t.n_rows()];
    for (cls, rows) in by_class.iter().enumerate() {
        for &i in rows.choose_multiple(&mut rng, quota[cls]) {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..t.n_rows()).partition(|&i| is_test[i]);
    Ok((t.select(&train), t.select(&test)))
}
