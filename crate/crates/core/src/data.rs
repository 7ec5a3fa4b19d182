//! Binary response matrices: CSV loading, categorical a/b encoding and
//! response-pattern tables.
//!
//! Two on-disk layouts are understood. `dense-csv` holds one observation per
//! line as comma separated `0`/`1` cells. `pattern-csv` holds `pattern,count`
//! lines where `pattern` is a string of `0`/`1` characters; each line becomes
//! one row carrying `count` as its weight. Every computation in the crate
//! treats a row of weight `w` exactly like `w` identical rows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, MltaError, Result};

/// On-disk layout of a binary response file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    DenseCsv,
    PatternCsv,
}

/// N×M matrix of binary responses with positive integer row weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataMatrix {
    n_vars: usize,
    values: Vec<u8>,
    weights: Vec<u64>,
    names: Option<Vec<String>>,
}

impl BinaryDataMatrix {
    /// Builds an unweighted matrix from rows of 0/1 values.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let weights = vec![1; rows.len()];
        Self::from_weighted_rows(rows, weights)
    }

    pub fn from_weighted_rows(rows: Vec<Vec<u8>>, weights: Vec<u64>) -> Result<Self> {
        if rows.len() != weights.len() {
            return arg_err("one weight per row is required");
        }
        let n_vars = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_vars);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_vars {
                return Err(MltaError::Parse {
                    row: i + 1,
                    col: 0,
                    message: format!("expected {n_vars} values, found {}", row.len()),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(MltaError::Parse {
                        row: i + 1,
                        col: j + 1,
                        message: format!("value {v} is not binary"),
                    });
                }
            }
            values.extend_from_slice(row);
        }
        if let Some(i) = weights.iter().position(|&w| w == 0) {
            return Err(MltaError::Parse {
                row: i + 1,
                col: 0,
                message: "row weight must be positive".into(),
            });
        }
        Ok(Self {
            n_vars,
            values,
            weights,
            names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_vars {
            return arg_err(format!("{} names supplied for {} variables", names.len(), self.n_vars));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.weights.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row(&self, n: usize) -> &[u8] {
        &self.values[n * self.n_vars..(n + 1) * self.n_vars]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> + '_ {
        (0..self.n_rows()).map(move |n| self.row(n))
    }

    pub fn weight(&self, n: usize) -> f64 {
        self.weights[n] as f64
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    /// Sum of the row weights.
    pub fn effective_n(&self) -> f64 {
        self.weights.iter().sum::<u64>() as f64
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Variable names, falling back to `V1..VM`.
    pub fn names_or_default(&self) -> Vec<String> {
        self.names
            .clone()
            .unwrap_or_else(|| (1..=self.n_vars).map(|m| format!("V{m}")).collect())
    }

    /// Copy of the matrix with row `n`'s weight reduced by one (the row is
    /// dropped when its weight reaches zero).
    pub fn without_one(&self, n: usize) -> Self {
        let mut out = self.clone();
        if out.weights[n] > 1 {
            out.weights[n] -= 1;
        } else {
            out.weights.remove(n);
            out.values.drain(n * self.n_vars..(n + 1) * self.n_vars);
        }
        out
    }

    /// Merges duplicate rows into weighted rows, in lexicographic pattern order.
    pub fn compress(&self) -> Self {
        let table = pattern_table(self);
        let (rows, weights) = table.into_iter().map(|p| (p.bits, p.observed)).unzip();
        let mut out = Self::from_weighted_rows(rows, weights).expect("valid by construction");
        if self.n_rows() == 0 {
            out.n_vars = self.n_vars;
        }
        out.names = self.names.clone();
        out
    }

    /// Expands weighted rows into repeated unit-weight rows.
    pub fn expand(&self) -> Self {
        let mut rows = Vec::new();
        for (n, &w) in self.weights.iter().enumerate() {
            for _ in 0..w {
                rows.push(self.row(n).to_vec());
            }
        }
        let mut out = Self::from_rows(rows).expect("valid by construction");
        out.n_vars = self.n_vars;
        out.names = self.names.clone();
        out
    }

    /// Column means weighted by the row weights.
    pub fn column_means(&self) -> Vec<f64> {
        let total = self.effective_n();
        let mut sums = vec![0.0; self.n_vars];
        for (n, row) in self.rows().enumerate() {
            let w = self.weight(n);
            for (s, &x) in sums.iter_mut().zip(row) {
                *s += w * f64::from(x);
            }
        }
        sums.iter().map(|s| s / total).collect()
    }

    /// Writes the matrix in the requested layout (UTF-8, LF line endings).
    /// `dense-csv` repeats weighted rows; `pattern-csv` emits one line per unique pattern.
    pub fn write<W: Write>(&self, mut out: W, format: DataFormat) -> Result<()> {
        match format {
            DataFormat::DenseCsv => {
                if let Some(names) = &self.names {
                    writeln!(out, "{}", names.join(","))?;
                }
                for (n, row) in self.rows().enumerate() {
                    let line = row
                        .iter()
                        .map(|v| if *v == 1 { "1" } else { "0" })
                        .collect::<Vec<_>>()
                        .join(",");
                    for _ in 0..self.weights[n] {
                        writeln!(out, "{line}")?;
                    }
                }
            }
            DataFormat::PatternCsv => {
                writeln!(out, "pattern,count")?;
                for p in pattern_table(self) {
                    writeln!(out, "{},{}", p.bitstring(), p.observed)?;
                }
            }
        }
        Ok(())
    }
}

fn is_numeric(token: &str) -> bool {
    token.trim().parse::<f64>().is_ok()
}

fn read_records<R: Read>(source: R) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| MltaError::Parse {
            row: i + 1,
            col: 0,
            message: e.to_string(),
        })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(records)
}

/// Reads a binary response matrix. A first row containing any non-numeric
/// token is taken as variable names.
pub fn load_matrix<R: Read>(source: R, format: DataFormat) -> Result<BinaryDataMatrix> {
    let records = read_records(source)?;
    let has_header = records.first().is_some_and(|r| r.iter().any(|t| !is_numeric(t)));
    let header = if has_header { records.first().cloned() } else { None };
    let body_offset = usize::from(has_header);

    let mut rows = Vec::with_capacity(records.len());
    let mut weights = Vec::with_capacity(records.len());
    let mut n_vars: Option<usize> = None;

    for (i, rec) in records.iter().enumerate().skip(body_offset) {
        let line = i + 1;
        let row: Vec<u8> = match format {
            DataFormat::DenseCsv => {
                let mut row = Vec::with_capacity(rec.len());
                for (j, tok) in rec.iter().enumerate() {
                    row.push(match tok.as_str() {
                        "0" => 0,
                        "1" => 1,
                        other => {
                            return Err(MltaError::Parse {
                                row: line,
                                col: j + 1,
                                message: format!("expected 0 or 1, found {other:?}"),
                            })
                        }
                    });
                }
                weights.push(1);
                row
            }
            DataFormat::PatternCsv => {
                if rec.len() != 2 {
                    return Err(MltaError::Parse {
                        row: line,
                        col: 0,
                        message: format!("expected `pattern,count`, found {} fields", rec.len()),
                    });
                }
                let mut row = Vec::with_capacity(rec[0].len());
                for ch in rec[0].chars() {
                    row.push(match ch {
                        '0' => 0,
                        '1' => 1,
                        other => {
                            return Err(MltaError::Parse {
                                row: line,
                                col: 1,
                                message: format!("pattern character {other:?} is not binary"),
                            })
                        }
                    });
                }
                let count: i64 = rec[1].parse().map_err(|_| MltaError::Parse {
                    row: line,
                    col: 2,
                    message: format!("count {:?} is not an integer", rec[1]),
                })?;
                if count <= 0 {
                    return Err(MltaError::Parse {
                        row: line,
                        col: 2,
                        message: format!("count must be positive, found {count}"),
                    });
                }
                weights.push(count as u64);
                row
            }
        };
        match n_vars {
            None => n_vars = Some(row.len()),
            Some(m) if m != row.len() => {
                return Err(MltaError::Parse {
                    row: line,
                    col: 0,
                    message: format!("expected {m} values, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }

    let mut matrix = BinaryDataMatrix::from_weighted_rows(rows, weights)?;
    if let (DataFormat::DenseCsv, Some(names)) = (format, header) {
        if matrix.n_rows() == 0 {
            matrix.n_vars = names.len();
        }
        if names.len() != matrix.n_vars {
            return Err(MltaError::Parse {
                row: 1,
                col: 0,
                message: format!(
                    "header has {} names but rows have {} values",
                    names.len(),
                    matrix.n_vars
                ),
            });
        }
        matrix.names = Some(names);
    }
    Ok(matrix)
}

/// One response pattern and its observed (weighted) count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub bits: Vec<u8>,
    pub observed: u64,
}

impl Pattern {
    pub fn bitstring(&self) -> String {
        self.bits.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.bitstring(), self.observed)
    }
}

/// Unique response patterns with summed weights, in lexicographic order.
pub fn pattern_table(data: &BinaryDataMatrix) -> Vec<Pattern> {
    let mut counts: BTreeMap<&[u8], u64> = BTreeMap::new();
    for (n, row) in data.rows().enumerate() {
        *counts.entry(row).or_default() += data.weights[n];
    }
    counts
        .into_iter()
        .map(|(bits, observed)| Pattern {
            bits: bits.to_vec(),
            observed,
        })
        .collect()
}

/// A table of categorical responses, one label per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalTable {
    names: Vec<String>,
    labels: Vec<Vec<String>>,
    cells: Vec<Vec<String>>,
}

impl CategoricalTable {
    /// Builds a table; each column's label set is the set of labels it contains.
    pub fn new(names: Vec<String>, cells: Vec<Vec<String>>) -> Result<Self> {
        let mut labels = vec![Vec::<String>::new(); names.len()];
        for (i, row) in cells.iter().enumerate() {
            if row.len() != names.len() {
                return Err(MltaError::Parse {
                    row: i + 2,
                    col: 0,
                    message: format!("expected {} cells, found {}", names.len(), row.len()),
                });
            }
            for (set, cell) in labels.iter_mut().zip(row) {
                if !set.contains(cell) {
                    set.push(cell.clone());
                }
            }
        }
        labels.iter_mut().for_each(|s| s.sort());
        Ok(Self { names, labels, cells })
    }

    /// Reads a CSV with a header row of column names.
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut records = read_records(source)?.into_iter();
        let names = records
            .next()
            .ok_or_else(|| MltaError::Argument("categorical table has no header".into()))?;
        Self::new(names, records.collect())
    }

    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Distinct labels observed in column `j`, sorted.
    pub fn labels(&self, j: usize) -> &[String] {
        &self.labels[j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = &str> + '_ {
        self.cells.iter().map(move |r| r[j].as_str())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Keeps every column except those named in `drop`.
    pub fn without_columns(&self, drop: &[&str]) -> Result<Self> {
        for d in drop {
            if self.column_index(d).is_none() {
                return arg_err(format!("no column named {d:?}"));
            }
        }
        let keep: Vec<usize> = (0..self.names.len())
            .filter(|&j| !drop.contains(&self.names[j].as_str()))
            .collect();
        Self::new(
            keep.iter().map(|&j| self.names[j].clone()).collect(),
            self.cells
                .iter()
                .map(|r| keep.iter().map(|&j| r[j].clone()).collect())
                .collect(),
        )
    }
}

/// Label mapping for the two-variable coding of yes/no/undecided responses:
/// `a` records decided versus undecided and `b` records yes versus not-yes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbCoding {
    pub yes: Vec<String>,
    pub no: Vec<String>,
    pub undecided: Vec<String>,
}

impl AbCoding {
    pub fn new(yes: &[&str], no: &[&str], undecided: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            yes: own(yes),
            no: own(no),
            undecided: own(undecided),
        }
    }

    fn code(&self, label: &str) -> Option<(u8, u8)> {
        let hit = |set: &[String]| set.iter().any(|s| s == label);
        if hit(&self.yes) {
            Some((1, 1))
        } else if hit(&self.no) {
            Some((1, 0))
        } else if hit(&self.undecided) {
            Some((0, 0))
        } else {
            None
        }
    }
}

impl Default for AbCoding {
    /// `y` / `n` / `?`, the labels of the UCI congressional voting records.
    fn default() -> Self {
        Self::new(&["y"], &["n"], &["?"])
    }
}

/// Encodes every column into an `a`/`b` pair, giving `2 × columns` binary
/// variables named `<column>_a`, `<column>_b`.
pub fn encode_categorical(table: &CategoricalTable, scheme: &AbCoding) -> Result<BinaryDataMatrix> {
    let mut rows = Vec::with_capacity(table.n_rows());
    for row in &table.cells {
        let mut out = Vec::with_capacity(2 * row.len());
        for (j, label) in row.iter().enumerate() {
            let (a, b) = scheme.code(label).ok_or_else(|| MltaError::Encoding {
                column: table.names[j].clone(),
                label: label.clone(),
            })?;
            out.push(a);
            out.push(b);
        }
        rows.push(out);
    }
    let names = table
        .names
        .iter()
        .flat_map(|n| [format!("{n}_a"), format!("{n}_b")])
        .collect();
    let mut m = BinaryDataMatrix::from_rows(rows)?;
    if m.is_empty() {
        m.n_vars = 2 * table.names.len();
    }
    m.with_names(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(s: &str) -> Result<BinaryDataMatrix> {
        load_matrix(s.as_bytes(), DataFormat::DenseCsv)
    }

    #[test]
    fn dense_rows_echo() {
        let m = dense("0,1\n1,1").unwrap();
        assert_eq!((m.n_rows(), m.n_vars()), (2, 2));
        assert_eq!(m.row(0), &[0, 1]);
        assert_eq!(m.weights(), &[1, 1]);
    }

    #[test]
    fn pattern_rows_become_weights() {
        let m = load_matrix("01,3\n11,2".as_bytes(), DataFormat::PatternCsv).unwrap();
        assert_eq!(m.weights(), &[3, 2]);
        assert_eq!(m.effective_n(), 5.0);
        assert_eq!(m.row(1), &[1, 1]);
    }

    #[test]
    fn non_binary_cell_reports_position() {
        match dense("0,2\n1,1") {
            Err(MltaError::Parse { row, col, .. }) => assert_eq!((row, col), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_missing_are_rejected() {
        assert!(matches!(dense("0,1\n1"), Err(MltaError::Parse { row: 2, .. })));
        assert!(matches!(dense("0,1\n1,"), Err(MltaError::Parse { row: 2, col: 2, .. })));
    }

    #[test]
    fn non_positive_count_is_rejected() {
        for src in ["01,0", "01,-2"] {
            let err = load_matrix(src.as_bytes(), DataFormat::PatternCsv).unwrap_err();
            assert!(matches!(err, MltaError::Parse { row: 1, col: 2, .. }), "{err}");
        }
    }

    #[test]
    fn header_is_detected() {
        let m = dense("q1,q2\n0,1\n1,0\n").unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.names().unwrap(), &["q1".to_string(), "q2".to_string()]);
        let p = load_matrix("pattern,count\n10,4\n".as_bytes(), DataFormat::PatternCsv).unwrap();
        assert_eq!(p.weights(), &[4]);
    }

    #[test]
    fn pattern_table_counts_and_orders() {
        let m = BinaryDataMatrix::from_rows(vec![vec![1, 1], vec![0, 1], vec![0, 1]]).unwrap();
        let t = pattern_table(&m);
        assert_eq!(
            t,
            vec![
                Pattern {
                    bits: vec![0, 1],
                    observed: 2
                },
                Pattern {
                    bits: vec![1, 1],
                    observed: 1
                }
            ]
        );
        let w = BinaryDataMatrix::from_weighted_rows(vec![vec![0, 1]], vec![3]).unwrap();
        assert_eq!(pattern_table(&w)[0].observed, 3);
        let empty = BinaryDataMatrix::from_rows(vec![]).unwrap();
        assert!(pattern_table(&empty).is_empty());
    }

    #[test]
    fn ab_coding_of_each_label() {
        let t = CategoricalTable::new(
            vec!["q".into()],
            vec![vec!["y".into()], vec!["?".into()], vec!["n".into()]],
        )
        .unwrap();
        let m = encode_categorical(&t, &AbCoding::default()).unwrap();
        assert_eq!(m.row(0), &[1, 1]);
        assert_eq!(m.row(1), &[0, 0]);
        assert_eq!(m.row(2), &[1, 0]);
        assert_eq!(m.names().unwrap(), &["q_a".to_string(), "q_b".to_string()]);
    }

    #[test]
    fn unmapped_label_names_column() {
        let t = CategoricalTable::new(vec!["vote".into()], vec![vec!["maybe".into()]]).unwrap();
        match encode_categorical(&t, &AbCoding::default()) {
            Err(MltaError::Encoding { column, label }) => {
                assert_eq!((column.as_str(), label.as_str()), ("vote", "maybe"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn without_one_decrements_weight() {
        let m = BinaryDataMatrix::from_weighted_rows(vec![vec![0], vec![1]], vec![2, 1]).unwrap();
        assert_eq!(m.without_one(0).weights(), &[1, 1]);
        let dropped = m.without_one(1);
        assert_eq!(dropped.n_rows(), 1);
        assert_eq!(dropped.row(0), &[0]);
    }

    #[test]
    fn writers_round_trip() {
        let m = load_matrix("a,b\n0,1\n1,1\n0,1\n".as_bytes(), DataFormat::DenseCsv).unwrap();
        for fmt in [DataFormat::DenseCsv, DataFormat::PatternCsv] {
            let mut buf = Vec::new();
            m.write(&mut buf, fmt).unwrap();
            let back = load_matrix(buf.as_slice(), fmt).unwrap();
            assert_eq!(pattern_table(&back), pattern_table(&m));
        }
    }
}
