//! Dataset ingestion, validation, splitting and standardisation.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    OrdinalCategorical,
}

/// Closed interval `[min, max]`. Unbounded sides use `f64::MAX` so the value
/// survives JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidRange {
    pub min: f64,
    pub max: f64,
}

impl ValidRange {
    pub const fn new(min: f64, max: f64) -> Self {
        ValidRange { min, max }
    }

    pub const fn unbounded() -> Self {
        ValidRange::new(-f64::MAX, f64::MAX)
    }

    pub const fn at_least(min: f64) -> Self {
        ValidRange::new(min, f64::MAX)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn is_integral(&self) -> bool {
        let int = |v: f64| v.fract() == 0.0 || v.abs() == f64::MAX;
        int(self.min) && int(self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub valid_range: ValidRange,
    pub column_index: usize,
}

impl FeatureSpec {
    pub fn continuous(name: &str, column_index: usize, valid_range: ValidRange) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Continuous,
            valid_range,
            column_index,
        }
    }

    pub fn categorical(name: &str, column_index: usize, min: i64, max: i64) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::OrdinalCategorical,
            valid_range: ValidRange::new(min as f64, max as f64),
            column_index,
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::OrdinalCategorical
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Taiwan,
    Gmsc,
    Synthetic,
    Generic,
}

/// Checks the schema-level invariants.
pub fn validate_schema(schema: &[FeatureSpec]) -> Result<()> {
    if schema.is_empty() {
        return Err(Error::Validation("schema has no features".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for spec in schema {
        if !seen.insert(spec.column_index) {
            return Err(Error::Validation(format!(
                "duplicate column index {} in schema",
                spec.column_index
            )));
        }
        if spec.valid_range.min > spec.valid_range.max {
            return Err(Error::Validation(format!(
                "feature {} has an empty valid range",
                spec.name
            )));
        }
        if spec.is_categorical() && !spec.valid_range.is_integral() {
            return Err(Error::Validation(format!(
                "categorical feature {} needs an integer range",
                spec.name
            )));
        }
    }
    Ok(())
}

/// Short hex digest identifying a schema (names, kinds and ranges).
pub fn schema_fingerprint(schema: &[FeatureSpec]) -> String {
    let bytes = serde_json::to_vec(schema).expect("schema serialises");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRepr {
    schema: Vec<FeatureSpec>,
    n: usize,
    p: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    provenance: Provenance,
}

/// Feature matrix (row-major) with binary labels and per-feature metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    schema: Vec<FeatureSpec>,
    n: usize,
    p: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    provenance: Provenance,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        if r.n * r.p != r.features.len() {
            return Err(Error::Validation(format!(
                "feature array has {} values, expected n*p = {}",
                r.features.len(),
                r.n * r.p
            )));
        }
        if r.p != r.schema.len() {
            return Err(Error::DimensionMismatch {
                expected: r.schema.len(),
                got: r.p,
            });
        }
        Dataset::new(r.schema, r.features, r.labels, r.provenance)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            schema: d.schema,
            n: d.n,
            p: d.p,
            features: d.features,
            labels: d.labels,
            provenance: d.provenance,
        }
    }
}

impl Dataset {
    /// Builds a dataset from row-major features, validating every invariant.
    pub fn new(
        schema: Vec<FeatureSpec>,
        features: Vec<f64>,
        labels: Vec<u8>,
        provenance: Provenance,
    ) -> Result<Self> {
        validate_schema(&schema)?;
        let p = schema.len();
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyDataset("no samples".into()));
        }
        if features.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: features.len(),
            });
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Validation(format!(
                "label {} at sample {i} is not 0 or 1",
                labels[i]
            )));
        }
        for (i, row) in features.chunks_exact(p).enumerate() {
            for (spec, &v) in schema.iter().zip(row) {
                check_value(spec, v).map_err(|msg| {
                    Error::Validation(format!("sample {i}, feature {}: {msg}", spec.name))
                })?;
            }
        }
        Ok(Dataset {
            schema,
            n,
            p,
            features,
            labels,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        &self.schema
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.features.chunks_exact(self.p)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn default_share(&self) -> f64 {
        self.labels.iter().filter(|&&y| y == 1).count() as f64 / self.n as f64
    }

    pub fn fingerprint(&self) -> String {
        schema_fingerprint(&self.schema)
    }

    /// Same features and schema with a different label vector.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Dataset> {
        if labels.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: labels.len(),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        Ok(Dataset {
            labels,
            ..self.clone()
        })
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("empty subset".into()));
        }
        let mut features = Vec::with_capacity(indices.len() * self.p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(Error::Argument(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            schema: self.schema.clone(),
            n: indices.len(),
            p: self.p,
            features,
            labels,
            provenance: self.provenance,
        })
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Dataset> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

fn check_value(spec: &FeatureSpec, v: f64) -> std::result::Result<(), String> {
    if !v.is_finite() {
        return Err(format!("non-finite value {v}"));
    }
    if !spec.valid_range.contains(v) {
        return Err(format!(
            "value {v} outside [{}, {}]",
            spec.valid_range.min, spec.valid_range.max
        ));
    }
    if spec.is_categorical() && v.fract() != 0.0 {
        return Err(format!("categorical value {v} is not an integer"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV ingestion

const MISSING_TOKENS: [&str; 6] = ["", "na", "nan", "null", "none", "?"];

fn is_missing(field: &str) -> bool {
    let f = field.trim().to_ascii_lowercase();
    MISSING_TOKENS.contains(&f.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPosition {
    First,
    Last,
}

/// Where the columns of a CSV file live.
#[derive(Debug, Clone)]
pub struct CsvLayout {
    pub schema: Vec<FeatureSpec>,
    /// Leading identifier column to skip.
    pub id_column: bool,
    pub label_position: LabelPosition,
    /// Drop rows with any missing field instead of failing.
    pub drop_missing: bool,
    pub provenance: Provenance,
}

struct RawRow {
    line: usize,
    fields: Vec<String>,
}

fn read_rows(path: &Path, has_header: bool) -> Result<(Option<RawRow>, Vec<RawRow>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut header = None;
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(k + 1);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = RawRow {
            line,
            fields: rec.iter().map(str::to_string).collect(),
        };
        if has_header && header.is_none() && rows.is_empty() {
            header = Some(row);
        } else {
            rows.push(row);
        }
    }
    Ok((header, rows))
}

fn parse_number(row: &RawRow, col: usize, name: &str) -> Result<f64> {
    let field = &row.fields[col];
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Ingest {
            row: row.line,
            column: name.to_string(),
            message: format!("cannot parse {field:?} as a number"),
        })
}

fn parse_label(row: &RawRow, col: usize) -> Result<u8> {
    let v = parse_number(row, col, "label")?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Ingest {
            row: row.line,
            column: "label".into(),
            message: format!("label {v} is not 0 or 1"),
        })
    }
}

fn parse_rows(rows: &[RawRow], layout: &CsvLayout) -> Result<Dataset> {
    let p = layout.schema.len();
    let expected = p + 1 + usize::from(layout.id_column);
    let offset = usize::from(layout.id_column);
    let (label_col, first_feature) = match layout.label_position {
        LabelPosition::First => (offset, offset + 1),
        LabelPosition::Last => (expected - 1, offset),
    };
    let mut features = Vec::with_capacity(rows.len() * p);
    let mut labels = Vec::with_capacity(rows.len());
    let mut dropped = 0usize;
    for row in rows {
        if row.fields.len() != expected {
            return Err(Error::Ingest {
                row: row.line,
                column: "*".into(),
                message: format!("expected {expected} fields, found {}", row.fields.len()),
            });
        }
        if layout.drop_missing && row.fields.iter().skip(offset).any(|f| is_missing(f)) {
            dropped += 1;
            continue;
        }
        let label = parse_label(row, label_col)?;
        for spec in &layout.schema {
            let v = parse_number(row, first_feature + spec.column_index, &spec.name)?;
            check_value(spec, v).map_err(|message| {
                Error::Validation(format!("row {}, column {}: {message}", row.line, spec.name))
            })?;
            features.push(v);
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(if dropped > 0 {
            format!("all {dropped} rows had missing values")
        } else {
            "no data rows".into()
        }));
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    Dataset::new(layout.schema.clone(), features, labels, layout.provenance)
}

/// Loads any CSV described by `layout`.
pub fn load_csv(path: &Path, layout: &CsvLayout, has_header: bool) -> Result<Dataset> {
    let (_, rows) = read_rows(path, has_header)?;
    if rows.is_empty() {
        return Err(Error::Ingest {
            row: 0,
            column: "*".into(),
            message: "file contains no data rows".into(),
        });
    }
    parse_rows(&rows, layout)
}

/// Schema of the UCI "default of credit card clients" data, x1..x23.
pub fn taiwan_schema() -> Vec<FeatureSpec> {
    let money = ValidRange::unbounded();
    let mut s = vec![
        FeatureSpec::continuous("LIMIT_BAL", 0, ValidRange::at_least(0.0)),
        FeatureSpec::categorical("SEX", 1, 1, 2),
        FeatureSpec::categorical("EDUCATION", 2, 0, 6),
        FeatureSpec::categorical("MARRIAGE", 3, 0, 3),
        FeatureSpec::continuous("AGE", 4, ValidRange::new(0.0, 150.0)),
    ];
    for (k, name) in ["PAY_0", "PAY_2", "PAY_3", "PAY_4", "PAY_5", "PAY_6"]
        .iter()
        .enumerate()
    {
        s.push(FeatureSpec::categorical(name, 5 + k, -2, 9));
    }
    for k in 0..6 {
        s.push(FeatureSpec::continuous(&format!("BILL_AMT{}", k + 1), 11 + k, money));
    }
    for k in 0..6 {
        s.push(FeatureSpec::continuous(
            &format!("PAY_AMT{}", k + 1),
            17 + k,
            ValidRange::at_least(0.0),
        ));
    }
    s
}

/// Schema of the Kaggle "Give Me Some Credit" training file, x1..x10.
pub fn gmsc_schema() -> Vec<FeatureSpec> {
    let nonneg = ValidRange::at_least(0.0);
    vec![
        FeatureSpec::continuous("RevolvingUtilizationOfUnsecuredLines", 0, nonneg),
        FeatureSpec::continuous("age", 1, ValidRange::new(0.0, 150.0)),
        FeatureSpec::categorical("NumberOfTime30-59DaysPastDueNotWorse", 2, 0, 99),
        FeatureSpec::continuous("DebtRatio", 3, nonneg),
        FeatureSpec::continuous("MonthlyIncome", 4, nonneg),
        FeatureSpec::categorical("NumberOfOpenCreditLinesAndLoans", 5, 0, 999),
        FeatureSpec::categorical("NumberOfTimes90DaysLate", 6, 0, 99),
        FeatureSpec::categorical("NumberRealEstateLoansOrLines", 7, 0, 999),
        FeatureSpec::categorical("NumberOfTime60-89DaysPastDueNotWorse", 8, 0, 99),
        FeatureSpec::categorical("NumberOfDependents", 9, 0, 99),
    ]
}

fn looks_like_header(row: &RawRow) -> bool {
    row.fields
        .iter()
        .any(|f| !f.is_empty() && !is_missing(f) && f.parse::<f64>().is_err())
}

/// Loads the Taiwan credit-card data. Accepts the Kaggle/UCI CSV export with
/// or without the leading `ID` column, and tolerates the second header line
/// (`X1..X23, Y` followed by names) of the original spreadsheet export.
pub fn load_taiwan(path: &Path, has_header: bool) -> Result<Dataset> {
    let (_, mut rows) = read_rows(path, has_header)?;
    if has_header && rows.first().is_some_and(looks_like_header) {
        rows.remove(0);
    }
    let Some(first) = rows.first() else {
        return Err(Error::Ingest {
            row: 0,
            column: "*".into(),
            message: "file contains no data rows".into(),
        });
    };
    let id_column = match first.fields.len() {
        25 => true,
        24 => false,
        k => {
            return Err(Error::Ingest {
                row: first.line,
                column: "*".into(),
                message: format!("expected 24 or 25 fields, found {k}"),
            })
        }
    };
    let layout = CsvLayout {
        schema: taiwan_schema(),
        id_column,
        label_position: LabelPosition::Last,
        drop_missing: false,
        provenance: Provenance::Taiwan,
    };
    parse_rows(&rows, &layout)
}

/// Loads `cs-training.csv`; rows with any missing value are dropped.
pub fn load_gmsc(path: &Path, has_header: bool) -> Result<Dataset> {
    let (_, rows) = read_rows(path, has_header)?;
    let Some(first) = rows.first() else {
        return Err(Error::Ingest {
            row: 0,
            column: "*".into(),
            message: "file contains no data rows".into(),
        });
    };
    let id_column = match first.fields.len() {
        12 => true,
        11 => false,
        k => {
            return Err(Error::Ingest {
                row: first.line,
                column: "*".into(),
                message: format!("expected 11 or 12 fields, found {k}"),
            })
        }
    };
    let layout = CsvLayout {
        schema: gmsc_schema(),
        id_column,
        label_position: LabelPosition::First,
        drop_missing: true,
        provenance: Provenance::Gmsc,
    };
    parse_rows(&rows, &layout)
}

/// Loads a CSV whose last column is the binary label and every other column
/// a continuous feature. Names come from the header when present.
pub fn load_generic(path: &Path, has_header: bool) -> Result<Dataset> {
    let (header, rows) = read_rows(path, has_header)?;
    let Some(first) = rows.first() else {
        return Err(Error::Ingest {
            row: 0,
            column: "*".into(),
            message: "file contains no data rows".into(),
        });
    };
    let p = first.fields.len().saturating_sub(1);
    if p == 0 {
        return Err(Error::Ingest {
            row: first.line,
            column: "*".into(),
            message: "need at least one feature column and a label".into(),
        });
    }
    let schema = (0..p)
        .map(|j| {
            let name = header
                .as_ref()
                .and_then(|h| h.fields.get(j).cloned())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| format!("x{}", j + 1));
            FeatureSpec::continuous(&name, j, ValidRange::unbounded())
        })
        .collect();
    let layout = CsvLayout {
        schema,
        id_column: false,
        label_position: LabelPosition::Last,
        drop_missing: false,
        provenance: Provenance::Generic,
    };
    parse_rows(&rows, &layout)
}

// ---------------------------------------------------------------------------
// Splitting

/// Uniform random partition of `0..n` into sorted (train, test) index lists.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    if n == 0 {
        return Err(Error::EmptyDataset("cannot split an empty dataset".into()));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Argument(format!(
            "fraction {train_fraction} of {n} samples leaves an empty partition"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (tr, te) = split_indices(dataset.n(), train_fraction, seed)?;
    Ok((dataset.subset(&tr)?, dataset.subset(&te)?))
}

// ---------------------------------------------------------------------------
// Standardisation

/// Per-column training statistics. Only continuous, non-constant columns are
/// rescaled; ordinal categoricals keep their integer coding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub standard_deviations: Vec<f64>,
    pub constant: Vec<bool>,
    pub scaled: Vec<bool>,
    pub schema_fingerprint: String,
}

impl ScalerParams {
    pub fn fit(train: &Dataset) -> ScalerParams {
        let n = train.n() as f64;
        let p = train.p();
        let mut means = vec![0.0; p];
        for row in train.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for row in train.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let standard_deviations: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        let constant: Vec<bool> = standard_deviations
            .iter()
            .zip(&means)
            .map(|(&sd, &m)| sd <= 1e-12 * m.abs().max(1.0))
            .collect();
        let scaled = train
            .schema()
            .iter()
            .zip(&constant)
            .map(|(spec, &c)| !spec.is_categorical() && !c)
            .collect();
        ScalerParams {
            means,
            standard_deviations,
            constant,
            scaled,
            schema_fingerprint: train.fingerprint(),
        }
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            if self.scaled[j] {
                *v = (*v - self.means[j]) / self.standard_deviations[j];
            }
        }
    }

    /// Applies the scaling to a dataset with the same schema.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.fingerprint() != self.schema_fingerprint || data.p() != self.means.len() {
            return Err(Error::Validation(
                "dataset schema does not match the scaler's training schema".into(),
            ));
        }
        let mut features = data.features().to_vec();
        for row in features.chunks_exact_mut(data.p()) {
            self.transform_row(row);
        }
        let schema = data
            .schema()
            .iter()
            .zip(&self.scaled)
            .map(|(spec, &s)| {
                let mut spec = spec.clone();
                if s {
                    spec.valid_range = ValidRange::unbounded();
                }
                spec
            })
            .collect();
        Dataset::new(schema, features, data.labels().to_vec(), data.provenance())
    }
}

/// Fits a scaler on `train` and applies it to `train` and every dataset in
/// `others`.
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, ScalerParams)> {
    let params = ScalerParams::fit(train);
    let train_std = params.apply(train)?;
    let others = others
        .iter()
        .map(|d| params.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((train_std, others, params))
}
