//! Dataset ingestion, reproducible splits, feature standardization and
//! loading of black-box prediction files.
//!
//! All randomness flows through [`stream_rng`], a ChaCha8 generator keyed by
//! `seed ^ stream`. ChaCha8 output is specified independently of platform and
//! word size, so a given `(seed, stream)` yields the same split everywhere.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeded generator for one independent stream (trial, fit, ...).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        targets: DVector<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = features.shape();
        if n < 2 {
            return Err(Error::invalid(format!("dataset needs at least 2 rows, got {n}")));
        }
        if d == 0 {
            return Err(Error::invalid("dataset needs at least one feature column"));
        }
        if targets.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: targets.len(),
            });
        }
        if feature_names.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                found: feature_names.len(),
            });
        }
        for i in 0..n {
            if !targets[i].is_finite() || features.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i + 1 });
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            targets,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.features.select_rows(idx)
    }

    pub fn target_rows(&self, idx: &[usize]) -> DVector<f64> {
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.targets[i]))
    }
}

/// Which column holds the regression target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
    Last,
}

impl From<&str> for TargetColumn {
    /// A bare non-negative integer is taken as a zero-based column index
    /// unless it also matches a header name (resolved at load time).
    fn from(s: &str) -> Self {
        TargetColumn::Name(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Delimiter {
    Comma,
    Semicolon,
    Whitespace,
}

impl Delimiter {
    fn detect(header: &str) -> Self {
        if header.contains(',') {
            Delimiter::Comma
        } else if header.contains(';') {
            Delimiter::Semicolon
        } else {
            Delimiter::Whitespace
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        let cells: Vec<&str> = match self {
            Delimiter::Comma => line.split(',').collect(),
            Delimiter::Semicolon => line.split(';').collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        };
        cells
            .into_iter()
            .map(|c| c.trim().trim_matches('"'))
            .collect()
    }
}

/// Header names and numeric rows of a delimited table. Rows are numbered
/// from 1 for the first data row in error messages.
fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Malformed("empty file".into()))?;
    let delim = Delimiter::detect(header);
    let names: Vec<String> = delim.split(header).into_iter().map(String::from).collect();
    let ncol = names.len();
    let mut rows = Vec::new();
    for (r, line) in lines.enumerate() {
        let row = r + 1;
        let cells = delim.split(line);
        if cells.len() != ncol {
            return Err(Error::Malformed(format!(
                "row {row} has {} cells, header has {ncol}",
                cells.len()
            )));
        }
        let mut values = Vec::with_capacity(ncol);
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                column: names[c].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row });
            }
            values.push(v);
        }
        rows.push(values);
    }
    Ok((names, rows))
}

/// Parses a delimited numeric table with a header row.
pub fn parse_dataset(name: &str, text: &str, target: &TargetColumn) -> Result<Dataset> {
    let (names, rows) = parse_table(text)?;
    let target_idx = match target {
        TargetColumn::Name(t) => match names.iter().position(|n| n == t) {
            Some(i) => i,
            None => match t.parse::<usize>() {
                Ok(i) if i < names.len() => i,
                _ => return Err(Error::MissingColumn(t.clone())),
            },
        },
        TargetColumn::Index(i) if *i < names.len() => *i,
        TargetColumn::Index(i) => return Err(Error::MissingColumn(i.to_string())),
        TargetColumn::Last if names.len() >= 2 => names.len() - 1,
        TargetColumn::Last => return Err(Error::Malformed("need at least one feature and a target column".into())),
    };
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid(format!("dataset needs at least 2 rows, got {n}")));
    }
    let ncol = names.len();
    let mut feats = Vec::with_capacity(n * (ncol - 1));
    let mut targets = Vec::with_capacity(n);
    for row in &rows {
        for (c, &v) in row.iter().enumerate() {
            if c == target_idx {
                targets.push(v);
            } else {
                feats.push(v);
            }
        }
    }
    let feature_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, s)| s.clone())
        .collect();
    let features = DMatrix::from_row_slice(n, ncol - 1, &feats);
    Dataset::new(name, features, DVector::from_vec(targets), feature_names)
}

/// Parses a feature-only table (header row, at least one data row).
pub fn parse_features(text: &str) -> Result<(DMatrix<f64>, Vec<String>)> {
    let (names, rows) = parse_table(text)?;
    if rows.is_empty() {
        return Err(Error::Malformed("no data rows".into()));
    }
    let flat: Vec<f64> = rows.concat();
    Ok((DMatrix::from_row_slice(rows.len(), names.len(), &flat), names))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, Vec<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text)
}

pub fn load_dataset(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&name, &text, target)
}

/// Parses a single-column prediction file. A non-numeric first line is
/// treated as a header.
pub fn parse_predictions(text: &str, expected_n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(expected_n);
    for (i, line) in text.lines().enumerate() {
        let cell = line.trim().trim_matches('"');
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => return Err(Error::NonFinite { row: out.len() + 1 }),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::NonNumeric {
                    row: out.len() + 1,
                    column: "prediction".into(),
                    value: cell.to_string(),
                })
            }
        }
    }
    if out.len() != expected_n {
        return Err(Error::LengthMismatch {
            expected: expected_n,
            found: out.len(),
        });
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>, expected_n: usize) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, expected_n)
}

/// Writes predictions in the format read by [`load_predictions`].
pub fn format_predictions(values: &[f64]) -> String {
    let mut s = String::from("prediction\n");
    for v in values {
        s.push_str(&format!("{v:?}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Random train/validation/test partition of `0..n`.
///
/// `|test| = round(n * test_frac)`, `|validation| = round((n - |test|) * val_frac)`,
/// the rest is train. Each list is returned sorted. `val_frac == 0` is an
/// explicit request for no validation part; otherwise every part must be
/// non-empty.
pub fn split(n: usize, seed: u64, test_frac: f64, val_frac: f64) -> Result<SplitIndices> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::invalid(format!("test_frac must be in (0, 1), got {test_frac}")));
    }
    if !(0.0..1.0).contains(&val_frac) {
        return Err(Error::invalid(format!("val_frac must be in [0, 1), got {val_frac}")));
    }
    let n_test = (n as f64 * test_frac).round() as usize;
    let rest = n.saturating_sub(n_test);
    let n_val = (rest as f64 * val_frac).round() as usize;
    let n_train = rest.saturating_sub(n_val);
    if n_test == 0 || n_test >= n || n_train == 0 || (val_frac > 0.0 && n_val == 0) {
        return Err(Error::invalid(format!(
            "split of n={n} with test_frac={test_frac}, val_frac={val_frac} leaves an empty part"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, 0));
    let mut test = perm[..n_test].to_vec();
    let mut validation = perm[n_test..n_test + n_val].to_vec();
    let mut train = perm[n_test + n_val..].to_vec();
    test.sort_unstable();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
        seed,
    })
}

/// Per-column affine standardization. Population (divide-by-n) standard
/// deviation; constant columns keep a stddev of 1 so they only shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::invalid(format!(
                "standardizer needs at least 2 rows, got {n}"
            )));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut stddevs = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            means.push(mean);
            stddevs.push(if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 });
        }
        Ok(Self { means, stddevs })
    }

    pub fn fit_rows(x: &DMatrix<f64>, rows: &[usize]) -> Result<Self> {
        Self::fit(&x.select_rows(rows))
    }

    /// One-dimensional standardizer for a vector (used for base-model outputs).
    pub fn fit_vector(v: &[f64]) -> Result<Self> {
        Self::fit(&DMatrix::from_column_slice(v.len(), 1, v))
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.stddevs[j]
        }))
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(z.ncols())?;
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            z[(i, j)] * self.stddevs[j] + self.means[j]
        }))
    }

    pub fn transform_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.means[j]) / self.stddevs[j])
            .collect())
    }

    pub fn transform_scalar(&self, v: f64) -> f64 {
        (v - self.means[0]) / self.stddevs[0]
    }

    fn check(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: d,
            });
        }
        Ok(())
    }
}
