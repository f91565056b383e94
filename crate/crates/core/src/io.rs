//! CSV and JSON readers and writers for matrices, masks, edge lists,
//! triplets, association counts and long-format result tables.
//!
//! Matrix files are headerless. Record files may start with their column
//! names as a header line, which is skipped. Blank lines are ignored and
//! parse errors report the 1-based line number.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Result, SrfError};
use crate::simmat::{DenseSimilarity, Mask, Triplet};

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> SrfError {
    SrfError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Comma-separated fields with their 1-based line numbers, skipping blank
/// lines and an optional header equal to `header`.
fn records(path: &Path, header: Option<&[&str]>) -> Result<Vec<(u64, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| SrfError::io(path, e))?;
    let mut out = Vec::new();
    let mut first = true;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx as u64 + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = raw.split(',').map(|f| f.trim().to_string()).collect();
        if std::mem::take(&mut first) {
            if let Some(h) = header {
                if fields.len() == h.len() && fields.iter().zip(h).all(|(f, h)| f.eq_ignore_ascii_case(h)) {
                    continue;
                }
            }
        }
        out.push((line, fields));
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: u64, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(path, line, format!("'{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("'{s}' is not finite")));
    }
    Ok(v)
}

fn parse_usize(path: &Path, line: u64, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(path, line, format!("'{s}' is not a non-negative integer")))
}

fn expect_fields(path: &Path, line: u64, fields: &[String], n: usize, names: &str) -> Result<()> {
    if fields.len() != n {
        return Err(parse_err(
            path,
            line,
            format!("expected {n} fields ({names}), found {}", fields.len()),
        ));
    }
    Ok(())
}

/// Headerless rectangular CSV of decimal numbers.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let rows = records(path, None)?;
    if rows.is_empty() {
        return Err(parse_err(path, 1, "file holds no rows"));
    }
    let width = rows[0].1.len();
    let mut data = Vec::with_capacity(rows.len() * width);
    for (line, fields) in &rows {
        if fields.len() != width {
            return Err(parse_err(
                path,
                *line,
                format!("row has {} values, expected {width}", fields.len()),
            ));
        }
        for f in fields {
            data.push(parse_f64(path, *line, f)?);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), width, &data))
}

/// Square 0/1 matrix.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    if m.nrows() != m.ncols() {
        return Err(SrfError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if let Some((idx, v)) = m.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        // column-major index back to a row for the message
        let row = idx % m.nrows();
        return Err(parse_err(path, row as u64 + 1, format!("mask entry {v} is not 0 or 1")));
    }
    let n = m.nrows();
    if (0..n).any(|i| (0..n).any(|j| m[(i, j)] != m[(j, i)])) {
        return Err(SrfError::invalid("mask is not symmetric"));
    }
    Ok(Mask::from_fn_and(n, |i, j| m[(i, j)] == 1.0))
}

/// Dense values plus an optional mask; without a mask every entry is
/// observed.
pub fn read_similarity(values: impl AsRef<Path>, mask: Option<&Path>) -> Result<DenseSimilarity> {
    let v = read_matrix(values)?;
    if v.nrows() != v.ncols() {
        return Err(SrfError::NotSquare {
            rows: v.nrows(),
            cols: v.ncols(),
        });
    }
    match mask {
        Some(p) => {
            let m = read_mask(p)?;
            if m.n() != v.nrows() {
                return Err(SrfError::ShapeMismatch(format!(
                    "mask is {0}x{0}, values are {1}x{1}",
                    m.n(),
                    v.nrows()
                )));
            }
            // unobserved values are ignored, so sanitize them before validation
            let n = v.nrows();
            let clean = DMatrix::from_fn(n, n, |i, j| if m.get(i, j) { v[(i, j)] } else { 0.0 });
            DenseSimilarity::new(clean, m)
        }
        None => DenseSimilarity::full(v),
    }
}

/// Edge list `i,j,value` with 0-based indices. Unlisted off-diagonal pairs
/// are unobserved; unlisted diagonal entries are observed with value 1.
pub fn read_edge_list(path: impl AsRef<Path>, n: Option<usize>) -> Result<DenseSimilarity> {
    let path = path.as_ref();
    let rows = records(path, Some(&["i", "j", "value"]))?;
    let mut edges = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        expect_fields(path, *line, f, 3, "i,j,value")?;
        edges.push((
            *line,
            parse_usize(path, *line, &f[0])?,
            parse_usize(path, *line, &f[1])?,
            parse_f64(path, *line, &f[2])?,
        ));
    }
    let inferred = edges.iter().map(|e| e.1.max(e.2) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(inferred);
    if n == 0 {
        return Err(parse_err(path, 1, "edge list is empty"));
    }
    let mut values = DMatrix::identity(n, n);
    let mut seen = DMatrix::from_element(n, n, false);
    for &(line, i, j, v) in &edges {
        if i >= n || j >= n {
            return Err(parse_err(path, line, format!("index outside 0..{n}")));
        }
        if v < 0.0 {
            return Err(parse_err(path, line, format!("negative similarity {v}")));
        }
        if seen[(i, j)] && values[(i, j)] != v {
            return Err(parse_err(path, line, format!("conflicting value for pair ({i}, {j})")));
        }
        values[(i, j)] = v;
        values[(j, i)] = v;
        seen[(i, j)] = true;
        seen[(j, i)] = true;
    }
    let mask = Mask::from_fn_and(n, |i, j| i == j || seen[(i, j)]);
    DenseSimilarity::new(values, mask)
}

/// Odd-one-out trials `a,b,odd_one_out`; returns the trials and the item
/// count implied by the largest index.
pub fn read_triplets(path: impl AsRef<Path>) -> Result<(Vec<Triplet>, usize)> {
    let path = path.as_ref();
    let rows = records(path, Some(&["a", "b", "odd_one_out"]))?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        expect_fields(path, *line, f, 3, "a,b,odd_one_out")?;
        let t = Triplet {
            a: parse_usize(path, *line, &f[0])?,
            b: parse_usize(path, *line, &f[1])?,
            odd: parse_usize(path, *line, &f[2])?,
        };
        if t.a == t.b || t.a == t.odd || t.b == t.odd {
            return Err(parse_err(path, *line, "a triplet needs three distinct items"));
        }
        out.push(t);
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, "no triplets"));
    }
    let n = out.iter().map(|t| t.a.max(t.b).max(t.odd) + 1).max().unwrap_or(0);
    Ok((out, n))
}

/// Cue–response counts `cue,response,count`.
pub fn read_associations(path: impl AsRef<Path>) -> Result<Vec<(String, String, u64)>> {
    let path = path.as_ref();
    let rows = records(path, Some(&["cue", "response", "count"]))?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        expect_fields(path, *line, f, 3, "cue,response,count")?;
        let count: u64 = f[2]
            .parse()
            .map_err(|_| parse_err(path, *line, format!("'{}' is not a non-negative integer", f[2])))?;
        if count == 0 {
            return Err(parse_err(path, *line, "counts must be positive"));
        }
        out.push((f[0].clone(), f[1].clone(), count));
    }
    Ok(out)
}

/// Item ratings `item_id,value` with 0-based item indices.
pub fn read_targets(path: impl AsRef<Path>) -> Result<Vec<(usize, f64)>> {
    let path = path.as_ref();
    let rows = records(path, Some(&["item_id", "value"]))?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        expect_fields(path, *line, f, 2, "item_id,value")?;
        out.push((parse_usize(path, *line, &f[0])?, parse_f64(path, *line, &f[1])?));
    }
    Ok(out)
}

/// Pair list `i,j` with 0-based indices.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let rows = records(path, Some(&["i", "j"]))?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        expect_fields(path, *line, f, 2, "i,j")?;
        out.push((parse_usize(path, *line, &f[0])?, parse_usize(path, *line, &f[1])?));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| SrfError::io(path, e))?))
}

/// Headerless CSV using the shortest round-trip decimal form of each value.
pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&m[(i, j)].to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| SrfError::io(path, e))?;
    }
    w.flush().map_err(|e| SrfError::io(path, e))
}

pub fn write_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    write_matrix(path, &m.to_matrix())
}

/// One header line from the first record's field names, then one line per
/// record.
pub fn write_records<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => SrfError::io(path, io),
        other => SrfError::invalid(format!("cannot write {}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| SrfError::io(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| SrfError::io(path, e))
}
