use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fmt_f64;
use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_SPLIT_SEED: u64 = 20_240_501;

/// Rows of named numeric columns. Targets are a flagged subset of the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    row_ids: Vec<String>,
    feature_names: Vec<String>,
    values: DMatrix<f64>,
    target_names: Vec<String>,
}

impl FeatureTable {
    pub fn new(
        row_ids: Vec<String>,
        feature_names: Vec<String>,
        values: DMatrix<f64>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        if values.nrows() != row_ids.len() || values.ncols() != feature_names.len() {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{} but table has {} ids and {} columns",
                values.nrows(),
                values.ncols(),
                row_ids.len(),
                feature_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(row_ids.len());
        for id in &row_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateRowId(id.clone()));
            }
        }
        let mut names = HashSet::new();
        for name in &feature_names {
            if !names.insert(name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate column `{name}`")));
            }
        }
        for t in &target_names {
            if !names.contains(t.as_str()) {
                return Err(Error::MissingColumn(t.clone()));
            }
        }
        Ok(Self {
            row_ids,
            feature_names,
            values,
            target_names,
        })
    }

    /// Build from row-major data; convenient in tests and generators.
    pub fn from_rows(
        row_ids: Vec<String>,
        feature_names: Vec<String>,
        rows: &[Vec<f64>],
        target_names: Vec<String>,
    ) -> Result<Self> {
        let ncols = feature_names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
            return Err(Error::InvalidArgument(format!(
                "row has {} values, expected {ncols}",
                bad.len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
        Self::new(row_ids, feature_names, values, target_names)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    /// Columns that are not flagged as targets.
    pub fn input_names(&self) -> Vec<String> {
        self.feature_names
            .iter()
            .filter(|n| !self.target_names.contains(n))
            .cloned()
            .collect()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.values.column(j).iter().copied().collect())
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureTable {
        let values = self.values.select_rows(indices);
        FeatureTable {
            row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            values,
            target_names: self.target_names.clone(),
        }
    }

    /// Rows looked up by id, in the order given.
    pub fn select_ids(&self, ids: &[String]) -> Result<FeatureTable> {
        let index: std::collections::HashMap<&str, usize> = self
            .row_ids
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownRow(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_rows(&rows))
    }

    /// Columns in the order given; target flags are kept for retained columns.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureTable> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>>>()?;
        let values = self.values.select_columns(&idx);
        FeatureTable::new(
            self.row_ids.clone(),
            names.to_vec(),
            values,
            self.target_names
                .iter()
                .filter(|t| names.contains(t))
                .cloned()
                .collect(),
        )
    }

    pub fn with_row_ids(mut self, row_ids: Vec<String>) -> Result<FeatureTable> {
        if row_ids.len() != self.n_rows() {
            return Err(Error::InvalidArgument("row id count mismatch".into()));
        }
        self.row_ids = row_ids;
        FeatureTable::new(self.row_ids, self.feature_names, self.values, self.target_names)
    }

    pub fn with_values(&self, values: DMatrix<f64>) -> Result<FeatureTable> {
        FeatureTable::new(
            self.row_ids.clone(),
            self.feature_names.clone(),
            values,
            self.target_names.clone(),
        )
    }

    /// Stack tables with identical columns.
    pub fn concat(tables: &[&FeatureTable]) -> Result<FeatureTable> {
        let first = tables
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let n: usize = tables.iter().map(|t| t.n_rows()).sum();
        let mut values = DMatrix::zeros(n, first.n_cols());
        let mut ids = Vec::with_capacity(n);
        let mut offset = 0;
        for t in tables {
            if t.feature_names != first.feature_names {
                return Err(Error::ColumnMismatch {
                    expected: first.feature_names.join(","),
                    found: t.feature_names.join(","),
                });
            }
            values
                .view_mut((offset, 0), (t.n_rows(), t.n_cols()))
                .copy_from(&t.values);
            ids.extend(t.row_ids.iter().cloned());
            offset += t.n_rows();
        }
        FeatureTable::new(ids, first.feature_names.clone(), values, first.target_names.clone())
    }
}

/// Column roles for ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub id_column: String,
    pub target_columns: Vec<String>,
    /// Explicit feature list; `None` means every non-id, non-target column.
    pub feature_columns: Option<Vec<String>>,
    pub fingerprint_width: usize,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            id_column: "id".into(),
            target_columns: Vec::new(),
            feature_columns: None,
            fingerprint_width: 2048,
        }
    }
}

impl Schema {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut schema = Schema::default();
        if let Some(id) = kv.get("id_column") {
            schema.id_column = id.to_string();
        }
        if let Some(targets) = kv.list("target_columns") {
            schema.target_columns = targets;
        }
        schema.feature_columns = kv.list("feature_columns");
        if let Some(w) = kv.parsed::<usize>("fingerprint_width")? {
            if w == 0 {
                return Err(Error::Config("fingerprint_width must be positive".into()));
            }
            schema.fingerprint_width = w;
        }
        Ok(schema)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("id_column", &self.id_column);
        kv.set("target_columns", self.target_columns.join(","));
        if let Some(f) = &self.feature_columns {
            kv.set("feature_columns", f.join(","));
        }
        kv.set("fingerprint_width", self.fingerprint_width);
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub rows_loaded: usize,
    pub rows_dropped: usize,
}

impl LoadReport {
    pub fn render(&self) -> String {
        format!(
            "rows_loaded = {}\nrows_dropped = {}\n",
            self.rows_loaded, self.rows_dropped
        )
    }
}

/// Read a CSV feature table. Rows holding non-finite or unparsable numbers are dropped and counted.
pub fn load_feature_table(path: &Path, schema: &Schema) -> Result<(FeatureTable, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = find(&schema.id_column)?;
    for t in &schema.target_columns {
        find(t)?;
    }
    let names: Vec<String> = match &schema.feature_columns {
        Some(features) => {
            let mut names = features.clone();
            for t in &schema.target_columns {
                if !names.contains(t) {
                    names.push(t.clone());
                }
            }
            names
        }
        None => header
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != id_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cols = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(i + 2, e.to_string()))?;
        let id = record
            .get(id_col)
            .ok_or_else(|| parse_err(i + 2, "short row".into()))?
            .to_string();
        let mut row = Vec::with_capacity(cols.len());
        let mut ok = true;
        for &c in &cols {
            let field = record
                .get(c)
                .ok_or_else(|| parse_err(i + 2, "short row".into()))?;
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            ids.push(id);
            data.extend(row);
        } else {
            dropped += 1;
        }
    }
    if ids.is_empty() {
        return Err(Error::NoRows);
    }
    let values = DMatrix::from_row_slice(ids.len(), cols.len(), &data);
    let report = LoadReport {
        rows_loaded: ids.len(),
        rows_dropped: dropped,
    };
    let table = FeatureTable::new(ids, names, values, schema.target_columns.clone())?;
    Ok((table, report))
}

/// Write a table as CSV with an `id` column first.
pub fn write_feature_table(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut out = String::with_capacity(table.n_rows() * table.n_cols() * 20);
    out.push_str("id");
    for name in table.feature_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, id) in table.row_ids().iter().enumerate() {
        out.push_str(id);
        for j in 0..table.n_cols() {
            out.push(',');
            out.push_str(&fmt_f64(table.values[(i, j)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Seeded disjoint train/test partition; `fraction` is the training share.
pub fn split_rows(
    table: &FeatureTable,
    fraction: f64,
    seed: u64,
) -> Result<(FeatureTable, FeatureTable)> {
    let n = table.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData {
            rows: n,
            required: 2,
        });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::EmptySplit(fraction));
    }
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::EmptySplit(fraction));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((table.select_rows(&train), table.select_rows(&test)))
}
