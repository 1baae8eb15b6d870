//! Tabular numeric datasets: CSV loading, validation and z-score standardization.
//!
//! Every detector and evaluation harness in the crate works on a [`Dataset`]:
//! `n` observations by `d` named numeric columns, each row carrying a stable
//! identifier. Values are stored row-major.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest standard deviation treated as non-constant.
pub const MIN_STDDEV: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv has no header row")]
    MissingHeader,
    #[error("dataset has no observations")]
    Empty,
    #[error("dataset has no numeric columns")]
    NoColumns,
    #[error("id column {0:?} not found in header")]
    UnknownIdColumn(String),
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a finite number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("duplicate observation id {0:?}")]
    DuplicateId(String),
    #[error("value at row {row}, column {column} is not finite")]
    NonFinite { row: usize, column: usize },
    #[error("expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} observations, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
}

/// Stable observation identifier.
///
/// Ids that both parse as integers order numerically; otherwise they order
/// lexicographically, with integer ids sorting first. This is the order used
/// for every deterministic tie-break in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObsId(pub String);

impl ObsId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn as_integer(&self) -> Option<i128> {
        self.0.parse().ok()
    }
}

impl Ord for ObsId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.as_integer(), other.as_integer()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for ObsId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ObsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObsId {
    fn from(s: &str) -> Self {
        ObsId(s.to_owned())
    }
}

impl From<String> for ObsId {
    fn from(s: String) -> Self {
        ObsId(s)
    }
}

impl From<usize> for ObsId {
    fn from(i: usize) -> Self {
        ObsId(i.to_string())
    }
}

/// An `n × d` matrix of finite reals with named columns and unique row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    ids: Vec<ObsId>,
    values: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row vectors, validating shape, finiteness and id uniqueness.
    pub fn new(columns: Vec<String>, ids: Vec<ObsId>, rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let d = columns.len();
        if d == 0 {
            return Err(DataError::NoColumns);
        }
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        if ids.len() != rows.len() {
            return Err(DataError::DimensionMismatch {
                expected: rows.len(),
                found: ids.len(),
            });
        }
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(DataError::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { row: i, column: j });
            }
            values.extend(row);
        }
        check_unique(&ids)?;
        Ok(Self { columns, ids, values })
    }

    /// Dataset with ids `0..n` and columns `x1..xd`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let d = rows.first().map_or(0, Vec::len);
        let columns = (1..=d).map(|j| format!("x{j}")).collect();
        let ids = (0..rows.len()).map(ObsId::from).collect();
        Self::new(columns, ids, rows)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn ids(&self) -> &[ObsId] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.d())
    }

    pub fn value(&self, row: usize, column: usize) -> f64 {
        self.values[row * self.d() + column]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn row_index(&self, id: &ObsId) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Same schema and ids, new values. `values` is row-major and must be finite.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, DataError> {
        if values.len() != self.values.len() {
            return Err(DataError::DimensionMismatch {
                expected: self.values.len(),
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: k / self.d(),
                column: k % self.d(),
            });
        }
        Ok(Self {
            columns: self.columns.clone(),
            ids: self.ids.clone(),
            values,
        })
    }

    /// Appends rows, rejecting ids that collide with existing ones.
    pub fn append(&self, ids: Vec<ObsId>, rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let mut all_ids = self.ids.clone();
        all_ids.extend(ids);
        let mut all_rows: Vec<Vec<f64>> = self.rows().map(<[f64]>::to_vec).collect();
        all_rows.extend(rows);
        Self::new(self.columns.clone(), all_ids, all_rows)
    }

    /// Writes the dataset as CSV with a leading `id_column`.
    pub fn write_csv<W: Write>(&self, writer: W, id_column: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![id_column.to_owned()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(self.rows()) {
            let mut record = vec![id.0.clone()];
            record.extend(row.iter().map(|v| format_real(*v)));
            w.write_record(&record)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }
}

fn check_unique(ids: &[ObsId]) -> Result<(), DataError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id) {
            return Err(DataError::DuplicateId(id.0.clone()));
        }
    }
    Ok(())
}

/// Formats a real with 17 significant digits, the width that round-trips every `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Loads a CSV file. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, id_column: Option<&str>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, id_column)
}

/// Reads a headed CSV whose non-id cells are all finite reals.
///
/// Columns keep file order. Ids come from `id_column` when given, otherwise
/// they are the 0-based data row index. Parse errors name the 1-based data
/// row (header excluded) and the column.
pub fn read_csv<R: Read>(reader: R, id_column: Option<&str>) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(DataError::MissingHeader);
    }
    let id_pos = match id_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::UnknownIdColumn(name.to_owned()))?,
        ),
        None => None,
    };
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != id_pos)
        .map(|(_, h)| h.clone())
        .collect();

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow {
                row: row_no,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(columns.len());
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == id_pos {
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    row: row_no,
                    column: header[j].clone(),
                    value: cell.to_owned(),
                })?;
            row.push(v);
        }
        ids.push(match id_pos {
            Some(p) => ObsId(record[p].to_owned()),
            None => ObsId::from(i),
        });
        rows.push(row);
    }
    Dataset::new(columns, ids, rows)
}

/// Per-column z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    /// Columns whose spread was below [`MIN_STDDEV`]; their stddev is forced to 1.
    pub constant: Vec<bool>,
}

impl StandardizationParams {
    pub fn d(&self) -> usize {
        self.means.len()
    }

    pub fn constant_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.constant.iter().enumerate().filter(|(_, c)| **c).map(|(j, _)| j)
    }
}

/// Fits means and population (1/n) standard deviations.
pub fn fit_standardizer(data: &Dataset) -> Result<StandardizationParams, DataError> {
    let n = data.n();
    if n < 2 {
        return Err(DataError::TooFewRows { needed: 2, found: n });
    }
    let mut means = Vec::with_capacity(data.d());
    let mut stddevs = Vec::with_capacity(data.d());
    let mut constant = Vec::with_capacity(data.d());
    for j in 0..data.d() {
        let mean = data.column(j).sum::<f64>() / n as f64;
        let var = data.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let is_constant = sd < MIN_STDDEV * mean.abs().max(1.0);
        means.push(mean);
        stddevs.push(if is_constant { 1.0 } else { sd });
        constant.push(is_constant);
    }
    Ok(StandardizationParams {
        means,
        stddevs,
        constant,
    })
}

/// Maps each value `v` to `(v - mean) / stddev`.
pub fn standardize(data: &Dataset, params: &StandardizationParams) -> Result<Dataset, DataError> {
    transform(data, params, |v, m, s| (v - m) / s)
}

/// Inverse of [`standardize`].
pub fn destandardize(data: &Dataset, params: &StandardizationParams) -> Result<Dataset, DataError> {
    transform(data, params, |v, m, s| v * s + m)
}

fn transform(
    data: &Dataset,
    params: &StandardizationParams,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<Dataset, DataError> {
    if params.d() != data.d() || params.stddevs.len() != data.d() {
        return Err(DataError::DimensionMismatch {
            expected: params.d(),
            found: data.d(),
        });
    }
    let values = data
        .rows()
        .flat_map(|row| {
            row.iter()
                .zip(params.means.iter().zip(&params.stddevs))
                .map(|(&v, (&m, &s))| f(v, m, s))
        })
        .collect();
    data.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Vec<f64>>) -> Dataset {
        Dataset::from_rows(rows).unwrap()
    }

    #[test]
    fn loads_small_file_with_index_ids() {
        let data = read_csv("a,b\n1,2\n3,4\n5,6\n".as_bytes(), None).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.d(), 2);
        let ids: Vec<_> = data.ids().iter().map(ObsId::as_str).collect();
        assert_eq!(ids, ["0", "1", "2"]);
        assert_eq!(data.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let err = read_csv("a,b\n1,2\nabc,3\n".as_bytes(), None).unwrap_err();
        match err {
            DataError::Parse { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn eleven_numeric_columns_with_id() {
        let header: Vec<String> = std::iter::once("id".to_owned())
            .chain((1..=11).map(|j| format!("x{j}")))
            .collect();
        let mut text = header.join(",") + "\n";
        for i in 0..4 {
            let row: Vec<String> = std::iter::once(format!("emp{i}"))
                .chain((0..11).map(|j| (i * 11 + j).to_string()))
                .collect();
            text += &(row.join(",") + "\n");
        }
        let data = read_csv(text.as_bytes(), Some("id")).unwrap();
        assert_eq!(data.d(), 11);
        assert_eq!(data.ids()[3].as_str(), "emp3");
    }

    #[test]
    fn rejects_duplicate_ids_missing_values_and_unknown_id_column() {
        let dup = read_csv("id,a\n1,2\n1,3\n".as_bytes(), Some("id")).unwrap_err();
        assert!(matches!(dup, DataError::DuplicateId(ref id) if id == "1"));
        let missing = read_csv("a,b\n1,\n".as_bytes(), None).unwrap_err();
        assert!(matches!(missing, DataError::Parse { row: 1, .. }));
        let nan = read_csv("a\nNaN\n".as_bytes(), None).unwrap_err();
        assert!(matches!(nan, DataError::Parse { .. }));
        let unknown = read_csv("a\n1\n".as_bytes(), Some("key")).unwrap_err();
        assert!(matches!(unknown, DataError::UnknownIdColumn(_)));
        assert!(matches!(read_csv("a,b\n".as_bytes(), None), Err(DataError::Empty)));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv("/nonexistent/definitely.csv", None),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn csv_round_trip_preserves_rows_and_order() {
        let data = read_csv("id,a,b\nz,0.1,2\n10,3,1e-7\n2,5,6\n".as_bytes(), Some("id")).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf, "id").unwrap();
        let back = read_csv(buf.as_slice(), Some("id")).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn obs_id_orders_numerically_then_lexically() {
        let mut ids: Vec<ObsId> = ["10", "b", "2", "a", "-1"].into_iter().map(ObsId::from).collect();
        ids.sort();
        let s: Vec<_> = ids.iter().map(ObsId::as_str).collect();
        assert_eq!(s, ["-1", "2", "10", "a", "b"]);
    }

    #[test]
    fn constant_column_is_flagged_with_unit_stddev() {
        let p = fit_standardizer(&ds(vec![vec![1.0], vec![1.0], vec![1.0]])).unwrap();
        assert_eq!(p.means, [1.0]);
        assert_eq!(p.stddevs, [1.0]);
        assert_eq!(p.constant, [true]);
    }

    #[test]
    fn population_stddev() {
        // [0, 2]: mean 1, population variance ((1)^2 + (1)^2) / 2 = 1.
        let p = fit_standardizer(&ds(vec![vec![0.0, -3.0], vec![2.0, 3.0]])).unwrap();
        assert_eq!(p.means, [1.0, 0.0]);
        assert_eq!(p.stddevs, [1.0, 3.0]);
        assert_eq!(p.constant, [false, false]);
    }

    #[test]
    fn fit_needs_two_rows() {
        assert!(matches!(
            fit_standardizer(&ds(vec![vec![1.0]])),
            Err(DataError::TooFewRows { .. })
        ));
    }

    #[test]
    fn standardize_and_inverse_on_known_values() {
        let params = StandardizationParams {
            means: vec![5.0],
            stddevs: vec![2.0],
            constant: vec![false],
        };
        let z = standardize(&ds(vec![vec![5.0], vec![7.0]]), &params).unwrap();
        assert_eq!(z.row(0), &[0.0]);
        assert_eq!(z.row(1), &[1.0]);
        let back = destandardize(&ds(vec![vec![0.0], vec![1.0]]), &params).unwrap();
        assert_eq!(back.row(0), &[5.0]);
        assert_eq!(back.row(1), &[7.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = StandardizationParams {
            means: vec![0.0; 3],
            stddevs: vec![1.0; 3],
            constant: vec![false; 3],
        };
        assert!(matches!(
            standardize(&ds(vec![vec![1.0, 2.0]]), &params),
            Err(DataError::DimensionMismatch { .. })
        ));
    }
}
