//! Dataset ingestion, equal-width discretization, and train/test splitting.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// Number of equal-width bins used for continuous features by default.
pub const DEFAULT_BINS: usize = 5;

/// Integer-coded samples: `M x N` feature codes plus a label column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDataset {
    codes: Vec<Vec<usize>>,
    labels: Vec<usize>,
    feature_cardinalities: Vec<usize>,
    label_cardinality: usize,
    bin_edges: Vec<Option<Vec<f64>>>,
    feature_names: Vec<String>,
}

impl DiscreteDataset {
    pub fn new(
        codes: Vec<Vec<usize>>,
        labels: Vec<usize>,
        feature_cardinalities: Vec<usize>,
        label_cardinality: usize,
    ) -> Result<Self> {
        if codes.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} feature rows but {} labels",
                codes.len(),
                labels.len()
            )));
        }
        let n = feature_cardinalities.len();
        for (row, r) in codes.iter().enumerate() {
            if r.len() != n {
                return Err(Error::arg(format!("row {row} has {} features, expected {n}", r.len())));
            }
            for (variable, (&value, &cardinality)) in r.iter().zip(&feature_cardinalities).enumerate() {
                if value >= cardinality {
                    return Err(Error::IndexBounds {
                        variable,
                        row,
                        value,
                        cardinality,
                    });
                }
            }
        }
        if let Some(row) = labels.iter().position(|&y| y >= label_cardinality) {
            return Err(Error::IndexBounds {
                variable: n,
                row,
                value: labels[row],
                cardinality: label_cardinality,
            });
        }
        Ok(Self {
            codes,
            labels,
            feature_cardinalities,
            label_cardinality,
            bin_edges: vec![None; n],
            feature_names: (0..n).map(|k| format!("x{k}")).collect(),
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_features() {
            return Err(Error::arg("feature name count does not match feature count"));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn with_bin_edges(mut self, edges: Vec<Option<Vec<f64>>>) -> Result<Self> {
        if edges.len() != self.num_features() {
            return Err(Error::arg("bin edge count does not match feature count"));
        }
        for (k, e) in edges.iter().enumerate() {
            if let Some(e) = e {
                if e.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::arg(format!("bin edges of feature {k} not strictly increasing")));
                }
            }
        }
        self.bin_edges = edges;
        Ok(self)
    }

    pub fn num_samples(&self) -> usize {
        self.codes.len()
    }

    pub fn num_features(&self) -> usize {
        self.feature_cardinalities.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.codes[r]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.codes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_cardinalities(&self) -> &[usize] {
        &self.feature_cardinalities
    }

    pub fn label_cardinality(&self) -> usize {
        self.label_cardinality
    }

    pub fn bin_edges(&self) -> &[Option<Vec<f64>>] {
        &self.bin_edges
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Cardinalities of all features followed by the label.
    pub fn joint_dims(&self) -> Vec<usize> {
        let mut d = self.feature_cardinalities.clone();
        d.push(self.label_cardinality);
        d
    }

    /// Same metadata, rows restricted to `indices` (in that order).
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            codes: indices.iter().map(|&i| self.codes[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_cardinalities: self.feature_cardinalities.clone(),
            label_cardinality: self.label_cardinality,
            bin_edges: self.bin_edges.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// How a CSV column is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Label,
}

/// Column name to kind; exactly one column must be the label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    columns: BTreeMap<String, ColumnKind>,
}

impl Schema {
    pub fn new(columns: BTreeMap<String, ColumnKind>) -> Result<Self> {
        let labels = columns.values().filter(|&&k| k == ColumnKind::Label).count();
        if labels != 1 {
            return Err(Error::Schema(format!("expected exactly one label column, found {labels}")));
        }
        Ok(Self { columns })
    }

    /// Parse `{"column": "continuous" | "categorical" | "label", ...}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed schema: {e}")))?;
        let mut columns = BTreeMap::new();
        for (name, kind) in raw {
            let kind = match kind.as_str() {
                "continuous" => ColumnKind::Continuous,
                "categorical" => ColumnKind::Categorical,
                "label" => ColumnKind::Label,
                other => return Err(Error::Schema(format!("unknown column type {other:?} for {name:?}"))),
            };
            columns.insert(name, kind);
        }
        Self::new(columns)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("schema not found: {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn kind(&self, column: &str) -> Option<ColumnKind> {
        self.columns.get(column).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RawValues {
    Continuous(Vec<f64>),
    /// Dense codes assigned in first-appearance order, with their level strings.
    Categorical { codes: Vec<usize>, levels: Vec<String> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub values: RawValues,
}

/// Parsed CSV before discretization, columns in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    columns: Vec<RawColumn>,
    num_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "?" || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

impl RawTable {
    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn columns(&self) -> &[RawColumn] {
        &self.columns
    }

    pub fn label_column(&self) -> &RawColumn {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("table always has a label column")
    }

    /// Feature columns in file order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &RawColumn> {
        self.columns.iter().filter(|c| c.kind != ColumnKind::Label)
    }

    pub fn num_features(&self) -> usize {
        self.feature_columns().count()
    }

    pub fn from_reader<R: Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
            return Err(Error::Parse {
                line: 1,
                message: "empty file: no header row".into(),
            });
        }
        let mut kinds = Vec::with_capacity(headers.len());
        for h in headers.iter() {
            let k = schema
                .kind(h)
                .ok_or_else(|| Error::Schema(format!("column {h:?} is not declared in the schema")))?;
            kinds.push(k);
        }
        for name in schema.columns.keys() {
            if !headers.iter().any(|h| h == name) {
                return Err(Error::Schema(format!("schema column {name:?} not present in file")));
            }
        }

        enum Builder {
            Continuous(Vec<f64>),
            Categorical {
                codes: Vec<usize>,
                levels: Vec<String>,
                lookup: HashMap<String, usize>,
            },
        }
        let mut builders: Vec<Builder> = kinds
            .iter()
            .map(|k| match k {
                ColumnKind::Continuous => Builder::Continuous(Vec::new()),
                _ => Builder::Categorical {
                    codes: Vec::new(),
                    levels: Vec::new(),
                    lookup: HashMap::new(),
                },
            })
            .collect();

        let mut num_rows = 0;
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            if record.len() != headers.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            for ((cell, b), name) in record.iter().zip(builders.iter_mut()).zip(headers.iter()) {
                if is_missing(cell) {
                    return Err(Error::Parse {
                        line,
                        message: format!("missing value in column {name:?}"),
                    });
                }
                match b {
                    Builder::Continuous(v) => {
                        let x: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                            line,
                            message: format!("column {name:?}: {cell:?} is not a number"),
                        })?;
                        if !x.is_finite() {
                            return Err(Error::Parse {
                                line,
                                message: format!("column {name:?}: non-finite value"),
                            });
                        }
                        v.push(x);
                    }
                    Builder::Categorical { codes, levels, lookup } => {
                        let key = cell.trim().to_string();
                        let next = levels.len();
                        let code = *lookup.entry(key.clone()).or_insert_with(|| {
                            levels.push(key);
                            next
                        });
                        codes.push(code);
                    }
                }
            }
            num_rows += 1;
        }
        if num_rows == 0 {
            return Err(Error::Parse {
                line: 2,
                message: "file has no data rows".into(),
            });
        }
        let columns = headers
            .iter()
            .zip(kinds)
            .zip(builders)
            .map(|((name, kind), b)| RawColumn {
                name: name.to_string(),
                kind,
                values: match b {
                    Builder::Continuous(v) => RawValues::Continuous(v),
                    Builder::Categorical { codes, levels, .. } => RawValues::Categorical { codes, levels },
                },
            })
            .collect();
        Ok(Self { columns, num_rows })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.columns.iter().map(|c| c.name.as_str())).map_err(io)?;
        for r in 0..self.num_rows {
            let cells: Vec<String> = self
                .columns
                .iter()
                .map(|c| match &c.values {
                    RawValues::Continuous(v) => v[r].to_string(),
                    RawValues::Categorical { codes, levels } => levels[codes[r]].clone(),
                })
                .collect();
            w.write_record(&cells).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Read a CSV file with a header row, interpreting columns per `schema`.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawTable> {
    let file = std::fs::File::open(path.as_ref())?;
    RawTable::from_reader(std::io::BufReader::new(file), schema)
}

/// Equal-width binning rule fitted on a set of values.
#[derive(Clone, Debug, PartialEq)]
pub struct EqualWidthBins {
    min: f64,
    max: f64,
    bins: usize,
}

impl EqualWidthBins {
    pub fn fit(values: impl IntoIterator<Item = f64>, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::arg("bins must be >= 2"));
        }
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in values {
            min = min.min(x);
            max = max.max(x);
        }
        if !min.is_finite() {
            return Err(Error::arg("cannot fit bins on an empty set of values"));
        }
        Ok(Self { min, max, bins })
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    /// `bins + 1` edges from min to max, or `None` for a constant column.
    pub fn edges(&self) -> Option<Vec<f64>> {
        if self.is_degenerate() {
            return None;
        }
        let w = (self.max - self.min) / self.bins as f64;
        let mut e: Vec<f64> = (0..=self.bins).map(|k| self.min + k as f64 * w).collect();
        e[self.bins] = self.max;
        Some(e)
    }

    pub fn cardinality(&self) -> usize {
        if self.is_degenerate() {
            1
        } else {
            self.bins
        }
    }

    /// `floor((x - min) / width)` clamped to the valid bin range.
    pub fn code(&self, x: f64) -> usize {
        if self.is_degenerate() {
            return 0;
        }
        let w = (self.max - self.min) / self.bins as f64;
        let b = ((x - self.min) / w).floor();
        if b <= 0.0 {
            0
        } else {
            (b as usize).min(self.bins - 1)
        }
    }
}

/// Code every row of `table`, with continuous bin edges fitted on `fit_rows` only.
///
/// Categorical columns pass through with their ingestion codes. A constant
/// continuous column becomes a single bin (cardinality 1, no edges).
pub fn discretize_equal_width(table: &RawTable, bins: usize, fit_rows: &[usize]) -> Result<DiscreteDataset> {
    if fit_rows.is_empty() {
        return Err(Error::arg("discretization needs at least one fit row"));
    }
    if let Some(&r) = fit_rows.iter().find(|&&r| r >= table.num_rows) {
        return Err(Error::arg(format!("fit row {r} out of range")));
    }
    let m = table.num_rows;
    let mut codes = vec![Vec::with_capacity(table.num_features()); m];
    let mut cards = Vec::new();
    let mut edges = Vec::new();
    let mut names = Vec::new();
    for col in table.feature_columns() {
        names.push(col.name.clone());
        match &col.values {
            RawValues::Continuous(v) => {
                let rule = EqualWidthBins::fit(fit_rows.iter().map(|&r| v[r]), bins)?;
                if rule.is_degenerate() {
                    warn!("column {:?} is constant on the fit rows; coded as a single bin", col.name);
                }
                for (row, &x) in codes.iter_mut().zip(v) {
                    row.push(rule.code(x));
                }
                cards.push(rule.cardinality());
                edges.push(rule.edges());
            }
            RawValues::Categorical { codes: c, levels } => {
                for (row, &x) in codes.iter_mut().zip(c) {
                    row.push(x);
                }
                cards.push(levels.len());
                edges.push(None);
            }
        }
    }
    let (labels, label_card) = match &table.label_column().values {
        RawValues::Categorical { codes, levels } => (codes.clone(), levels.len()),
        RawValues::Continuous(_) => unreachable!("label columns are always categorical"),
    };
    DiscreteDataset::new(codes, labels, cards, label_card)?
        .with_feature_names(names)?
        .with_bin_edges(edges)
}

/// Train/test split protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub monte_carlo_runs: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.70,
            monte_carlo_runs: 10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::arg("train_fraction must be in (0, 1)"));
        }
        if self.monte_carlo_runs == 0 {
            return Err(Error::arg("monte_carlo_runs must be >= 1"));
        }
        Ok(())
    }
}

/// Row indices `(train, test)` for run `run_index`: a uniform permutation of
/// `0..m`, first `floor(fraction * m)` rows for training.
pub fn split_indices(m: usize, spec: &SplitSpec, run_index: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    if run_index >= spec.monte_carlo_runs {
        return Err(Error::arg(format!(
            "run index {run_index} >= monte_carlo_runs {}",
            spec.monte_carlo_runs
        )));
    }
    if m < 2 {
        return Err(Error::arg("splitting needs at least 2 samples"));
    }
    let n_train = (spec.train_fraction * m as f64).floor() as usize;
    if n_train == 0 || n_train == m {
        return Err(Error::arg(format!(
            "fraction {} leaves an empty side for {m} samples",
            spec.train_fraction
        )));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut derived_rng(spec.seed, "split", &[run_index as u64]));
    let test = perm.split_off(n_train);
    Ok((perm, test))
}

pub fn split(dataset: &DiscreteDataset, spec: &SplitSpec, run_index: usize) -> Result<(DiscreteDataset, DiscreteDataset)> {
    let (tr, te) = split_indices(dataset.num_samples(), spec, run_index)?;
    Ok((dataset.select_rows(&tr), dataset.select_rows(&te)))
}
