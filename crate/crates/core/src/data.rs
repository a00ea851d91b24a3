//! Dataset ingestion, quantile grids and fold assignment.
//!
//! All split points used by the forest come from a [`QuantileGrid`]: for each
//! feature, the empirical `q`-quantiles of the training column. The grid is
//! computed once per training sample and every tree shares it, so a cut is
//! identified by its `(feature, rank)` pair rather than by a floating point
//! threshold.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::Path as FsPath;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell contents treated as missing values.
const MISSING_MARKERS: &[&str] = &["", "NA", "na", "N/A", "NaN", "nan", "?"];

fn is_missing(cell: &str) -> bool {
    MISSING_MARKERS.contains(&cell.trim())
}

/// How a raw CSV column maps onto model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputColumn {
    Numeric { name: String },
    /// One indicator feature per level, named `name=level`.
    Categorical { name: String, levels: Vec<String> },
}

impl InputColumn {
    pub fn name(&self) -> &str {
        match self {
            InputColumn::Numeric { name } | InputColumn::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            InputColumn::Numeric { .. } => 1,
            InputColumn::Categorical { levels, .. } => levels.len(),
        }
    }
}

/// Feature encoding recorded at load time and reused to encode query files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub columns: Vec<InputColumn>,
}

impl FeatureEncoding {
    /// All numeric columns, named after `feature_names`.
    pub fn numeric(feature_names: &[String]) -> Self {
        FeatureEncoding {
            columns: feature_names
                .iter()
                .map(|name| InputColumn::Numeric { name: name.clone() })
                .collect(),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for col in &self.columns {
            match col {
                InputColumn::Numeric { name } => names.push(name.clone()),
                InputColumn::Categorical { name, levels } => {
                    names.extend(levels.iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        names
    }

    pub fn num_features(&self) -> usize {
        self.columns.iter().map(InputColumn::width).sum()
    }

    /// Encodes every record of a query CSV into a feature matrix.
    ///
    /// Extra columns are ignored. Missing cells, unknown categorical levels
    /// and absent columns are errors: a prediction needs every feature.
    pub fn encode_csv<R: Read>(&self, reader: R) -> Result<Array2<f64>> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let positions = self
            .columns
            .iter()
            .map(|col| {
                headers
                    .iter()
                    .position(|h| h.trim() == col.name())
                    .ok_or_else(|| Error::MissingColumn(col.name().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;

        let p = self.num_features();
        let mut values = Vec::new();
        let mut n = 0;
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (col, &pos) in self.columns.iter().zip(&positions) {
                let cell = record.get(pos).unwrap_or("").trim();
                match col {
                    InputColumn::Numeric { name } => {
                        values.push(parse_number(cell, name, row + 1)?);
                    }
                    InputColumn::Categorical { name, levels } => {
                        if !levels.iter().any(|l| l == cell) {
                            return Err(Error::InvalidDataset(format!(
                                "unknown level `{cell}` for categorical column `{name}` (row {})",
                                row + 1
                            )));
                        }
                        values.extend(levels.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
                    }
                }
            }
            n += 1;
        }
        Ok(Array2::from_shape_vec((n, p), values).expect("row width matches encoding"))
    }
}

fn parse_number(cell: &str, column: &str, row: usize) -> Result<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric {
            column: column.to_string(),
            row,
            value: cell.to_string(),
        }),
    }
}

/// A regression sample: `n` rows of `p` real features plus a real response.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    response: Vec<f64>,
    feature_names: Vec<String>,
    response_name: String,
    encoding: FeatureEncoding,
    dropped_rows: usize,
}

impl Dataset {
    /// Builds a dataset from an `n × p` matrix, all features numeric.
    pub fn new(features: Array2<f64>, response: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        let encoding = FeatureEncoding::numeric(&feature_names);
        Self::with_encoding(features, response, encoding, "y".to_string(), 0)
    }

    /// Convenience constructor from row vectors with generated names `x1..xp`.
    pub fn from_rows(rows: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidDataset("rows have different lengths".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), p), flat)
            .map_err(|e| Error::InvalidDataset(e.to_string()))?;
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::new(features, response, names)
    }

    fn with_encoding(
        features: Array2<f64>,
        response: Vec<f64>,
        encoding: FeatureEncoding,
        response_name: String,
        dropped_rows: usize,
    ) -> Result<Self> {
        let (n, p) = features.dim();
        let feature_names = encoding.feature_names();
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 rows, got {n}")));
        }
        if p == 0 {
            return Err(Error::InvalidDataset("no features".into()));
        }
        if response.len() != n {
            return Err(Error::InvalidDataset(format!(
                "response has {} values for {n} rows",
                response.len()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::InvalidDataset(format!(
                "{} feature names for {p} columns",
                feature_names.len()
            )));
        }
        if response.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Dataset {
            features,
            response,
            feature_names,
            response_name,
            encoding,
            dropped_rows,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.features.column(j)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn encoding(&self) -> &FeatureEncoding {
        &self.encoding
    }

    /// Rows removed at load time because of missing cells.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn response_mean(&self) -> f64 {
        mean(&self.response)
    }

    /// Rows `indices` (repetitions allowed) as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let features = self.features.select(ndarray::Axis(0), indices);
        let response = indices.iter().map(|&i| self.response[i]).collect();
        Self::with_encoding(
            features,
            response,
            self.encoding.clone(),
            self.response_name.clone(),
            0,
        )
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response_name = name.into();
        self
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by the count).
pub(crate) fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Reads a CSV file with a header row.
///
/// Columns listed in `categorical_columns` are one-hot encoded, levels sorted
/// lexicographically. Rows holding a missing cell in any used column are
/// dropped and counted.
pub fn load_dataset(
    source: impl AsRef<FsPath>,
    response_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset> {
    let path = source.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file, response_column, categorical_columns)
}

/// [`load_dataset`] over any reader.
pub fn read_dataset<R: Read>(
    reader: R,
    response_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let response_pos = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingColumn(response_column.to_string()))?;
    for cat in categorical_columns {
        if !headers.contains(cat) {
            return Err(Error::MissingColumn(cat.clone()));
        }
    }

    let mut kept: Vec<csv::StringRecord> = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record?;
        if (0..headers.len()).any(|c| is_missing(record.get(c).unwrap_or(""))) {
            dropped += 1;
        } else {
            kept.push(record);
        }
    }
    if kept.is_empty() {
        return Err(Error::NoUsableRows(format!(
            "{dropped} rows read, all with missing values"
        )));
    }

    let mut columns = Vec::new();
    let mut positions = Vec::new();
    for (pos, name) in headers.iter().enumerate() {
        if pos == response_pos {
            continue;
        }
        positions.push(pos);
        if categorical_columns.contains(name) {
            let levels: BTreeSet<String> =
                kept.iter().map(|r| r.get(pos).unwrap_or("").trim().to_string()).collect();
            columns.push(InputColumn::Categorical {
                name: name.clone(),
                levels: levels.into_iter().collect(),
            });
        } else {
            columns.push(InputColumn::Numeric { name: name.clone() });
        }
    }
    let encoding = FeatureEncoding { columns };

    let n = kept.len();
    let p = encoding.num_features();
    let mut values = Vec::with_capacity(n * p);
    let mut response = Vec::with_capacity(n);
    for (row, record) in kept.iter().enumerate() {
        response.push(parse_number(
            record.get(response_pos).unwrap_or(""),
            response_column,
            row + 1,
        )?);
        for (col, &pos) in encoding.columns.iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("").trim();
            match col {
                InputColumn::Numeric { name } => values.push(parse_number(cell, name, row + 1)?),
                InputColumn::Categorical { levels, .. } => {
                    values.extend(levels.iter().map(|l| if l == cell { 1.0 } else { 0.0 }))
                }
            }
        }
    }
    let features = Array2::from_shape_vec((n, p), values).expect("row width matches encoding");
    Dataset::with_encoding(features, response, encoding, response_column.to_string(), dropped)
}

/// One admissible split point of a feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    /// Quantile rank in `1..q`.
    pub rank: usize,
    pub value: f64,
}

/// Per-feature empirical quantiles, the only split values the forest may use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    q: usize,
    cuts: Vec<Vec<Cut>>,
}

impl QuantileGrid {
    /// Lower empirical quantiles: rank `r` maps to the order statistic at
    /// position `ceil(n r / q)` of the sorted column. Repeated values keep
    /// their smallest rank; constant columns get no cuts.
    pub fn compute(data: &Dataset, q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidParameter(format!("q must be at least 2, got {q}")));
        }
        let n = data.n();
        let cuts = (0..data.p())
            .map(|j| {
                let mut column = data.column(j).to_vec();
                column.sort_by(f64::total_cmp);
                if column[0] == column[n - 1] {
                    return Vec::new();
                }
                let mut cuts: Vec<Cut> = Vec::with_capacity(q - 1);
                for rank in 1..q {
                    let pos = (n * rank).div_ceil(q);
                    let value = column[pos.max(1) - 1];
                    if cuts.last().is_none_or(|c| c.value < value) {
                        cuts.push(Cut { rank, value });
                    }
                }
                cuts
            })
            .collect();
        Ok(QuantileGrid { q, cuts })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self, feature: usize) -> &[Cut] {
        &self.cuts[feature]
    }

    /// Position of `rank` in the cut list of `feature`.
    pub fn position(&self, feature: usize, rank: usize) -> Option<usize> {
        self.cuts
            .get(feature)?
            .binary_search_by_key(&rank, |c| c.rank)
            .ok()
    }

    pub fn cut_value(&self, feature: usize, rank: usize) -> Option<f64> {
        self.position(feature, rank).map(|pos| self.cuts[feature][pos].value)
    }

    /// Number of cuts of `feature` that are `<= x`; `x < cuts[k]` iff `bin(x) <= k`.
    pub fn bin(&self, feature: usize, x: f64) -> usize {
        self.cuts[feature].partition_point(|c| c.value <= x)
    }
}

/// Assignment of `n` samples to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// `(train, test)` row indices for `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.assignment.iter().enumerate() {
            if f == fold {
                test.push(i)
            } else {
                train.push(i)
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffled round-robin fold assignment; a pure function of `(n, k, seed)`.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("{k} folds for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldAssignment { k, assignment, seed })
}
