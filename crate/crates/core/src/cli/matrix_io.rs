//! Matrix, measurement and vector files.
//!
//! Coordinate format: a header line `m n`, then one `i j value` triple per
//! line with 0-based indices. `#` starts a comment; blank lines are ignored.
//! Values are written with 17 significant digits so a write/read cycle is
//! exact. Dense CSV (one matrix row per line) is accepted wherever a full
//! matrix is read and is detected by a comma on the first content line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::operators::{EntryMask, ExplicitAffine, MeasurementVector};

/// Entries of a coordinate file, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateData {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CoordinateData {
    /// Dense matrix with unlisted entries set to zero.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut x = DenseMatrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            x.set(i, j, v);
        }
        x
    }

    /// Observed positions and values for a matrix completion problem.
    pub fn to_measurements(&self) -> Result<(EntryMask, MeasurementVector)> {
        let omega = self.entries.iter().map(|&(i, j, _)| (i, j)).collect();
        let values = self.entries.iter().map(|&(_, _, v)| v).collect();
        Ok((
            EntryMask::new(self.rows, self.cols, omega)?,
            MeasurementVector::new(values)?,
        ))
    }

    pub fn from_measurements(mask: &EntryMask, b: &[f64]) -> Result<Self> {
        if mask.omega().len() != b.len() {
            return Err(Error::shape(
                format!("{} values", mask.omega().len()),
                format!("{} values", b.len()),
            ));
        }
        let (rows, cols) = mask.shape();
        let entries = mask.omega().iter().zip(b).map(|(&(i, j), &v)| (i, j, v)).collect();
        Ok(CoordinateData { rows, cols, entries })
    }

    /// Every entry of `x` in column-major order.
    pub fn from_dense(x: &DenseMatrix) -> Self {
        let mut entries = Vec::with_capacity(x.rows() * x.cols());
        for j in 0..x.cols() {
            for i in 0..x.rows() {
                entries.push((i, j, x.get(i, j)));
            }
        }
        CoordinateData {
            rows: x.rows(),
            cols: x.cols(),
            entries,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(32 * (self.entries.len() + 1));
        let _ = writeln!(out, "{} {}", self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            let _ = writeln!(out, "{i} {j} {}", fmt_value(v));
        }
        out
    }
}

pub(crate) fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(k, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((k + 1, line))
    })
}

fn parse_f64(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| parse_error(path, line, format!("invalid number {token:?}")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("non-finite value {token:?}")));
    }
    Ok(v)
}

fn parse_usize(path: &Path, line: usize, token: &str, what: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| parse_error(path, line, format!("invalid {what} {token:?}")))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses coordinate text. `path` only labels errors.
pub fn parse_coordinate(text: &str, path: &Path) -> Result<CoordinateData> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing \"m n\" header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_error(path, hline, "header must be \"m n\""));
    }
    let rows = parse_usize(path, hline, dims[0], "row count")?;
    let cols = parse_usize(path, hline, dims[1], "column count")?;
    if rows == 0 || cols == 0 {
        return Err(parse_error(path, hline, "dimensions must be positive"));
    }

    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut entries = Vec::new();
    for (lno, line) in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(parse_error(path, lno, "expected \"i j value\""));
        }
        let i = parse_usize(path, lno, tokens[0], "row index")?;
        let j = parse_usize(path, lno, tokens[1], "column index")?;
        if i >= rows || j >= cols {
            return Err(parse_error(
                path,
                lno,
                format!("index ({i}, {j}) outside {rows}x{cols}"),
            ));
        }
        let v = parse_f64(path, lno, tokens[2])?;
        if let Some(first) = seen.insert((i, j), lno) {
            return Err(parse_error(
                path,
                lno,
                format!("duplicate entry ({i}, {j}), first given on line {first}"),
            ));
        }
        entries.push((i, j, v));
    }
    Ok(CoordinateData { rows, cols, entries })
}

/// Parses a dense CSV matrix.
pub fn parse_csv_matrix(text: &str, path: &Path) -> Result<DenseMatrix> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lno, line) in content_lines(text) {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| parse_f64(path, lno, t))
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(parse_error(
                    path,
                    lno,
                    format!("expected {c} columns, found {}", row.len()),
                ))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_error(path, 1, "empty matrix"))?;
    DenseMatrix::from_row_major(rows, cols, &values)
}

fn looks_like_csv(text: &str) -> bool {
    content_lines(text).next().is_some_and(|(_, l)| l.contains(','))
}

pub fn read_coordinate(path: &Path) -> Result<CoordinateData> {
    parse_coordinate(&read_text(path)?, path)
}

/// Reads a full matrix from coordinate text or dense CSV.
pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = read_text(path)?;
    if looks_like_csv(&text) {
        parse_csv_matrix(&text, path)
    } else {
        Ok(parse_coordinate(&text, path)?.to_dense())
    }
}

/// Writes every entry of `x` in coordinate format.
pub fn write_matrix(path: &Path, x: &DenseMatrix) -> Result<()> {
    write_text(path, &CoordinateData::from_dense(x).to_text())
}

pub fn matrix_to_csv(x: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..x.rows() {
        let row: Vec<String> = (0..x.cols()).map(|j| fmt_value(x.get(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_measurements(path: &Path) -> Result<(EntryMask, MeasurementVector)> {
    read_coordinate(path)?.to_measurements()
}

pub fn write_measurements(path: &Path, mask: &EntryMask, b: &[f64]) -> Result<()> {
    write_text(path, &CoordinateData::from_measurements(mask, b)?.to_text())
}

/// One value per line.
pub fn read_vector(path: &Path) -> Result<MeasurementVector> {
    let text = read_text(path)?;
    let values = content_lines(&text)
        .map(|(lno, line)| parse_f64(path, lno, line))
        .collect::<Result<Vec<_>>>()?;
    MeasurementVector::new(values)
}

pub fn write_vector(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for &v in values {
        let _ = writeln!(out, "{}", fmt_value(v));
    }
    write_text(path, &out)
}

/// Explicit operator from a p×(rows·cols) coefficient matrix acting on the
/// column-major vectorization of X.
pub fn read_affine(path: &Path, rows: usize, cols: usize) -> Result<ExplicitAffine> {
    ExplicitAffine::new(rows, cols, read_matrix(path)?)
}
