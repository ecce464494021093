//! Instance file formats.
//!
//! * Matrix CSV: one row per primal coordinate, optional header line.
//! * Matrix binary: magic `DXMG`, `u64` rows, `u64` columns, then the
//!   entries as little-endian `f64` in row-major order.
//! * Affine-loss CSV: one row `b, a_1, …, a_d` per loss.
//! * Labelled data CSV: one row `label, x_1, …, x_d` per example.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::cvar::AffineLosses;
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"DXMG";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::invalid(format!("{}: {:?}", path.display(), other)),
    }
}

/// Numeric rows of a CSV file; every row must have the same width.
pub fn read_csv_rows(path: &Path, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::invalid(format!("{}: record {}: not a number: {s:?}", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first().map(|r: &Vec<f64>| r.len()) {
            if row.len() != first {
                return Err(Error::invalid(format!(
                    "{}: record {} has {} fields, expected {first}",
                    path.display(),
                    line + 1,
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::invalid(format!("{}: no data", path.display())));
    }
    Ok(rows)
}

pub fn write_csv_rows(path: &Path, header: Option<&[String]>, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_matrix_csv(path: &Path, has_header: bool) -> Result<DMatrix<f64>> {
    let rows = read_csv_rows(path, has_header)?;
    let (d, n) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(d, n, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    let rows: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    write_csv_rows(path, None, &rows)
}

pub fn matrix_to_bytes(a: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * a.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.extend_from_slice(&a[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 20 || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::invalid("missing DXMG header"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes"));
    let (d, n) = (word(4) as usize, word(12) as usize);
    let expected = d
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(20))
        .ok_or_else(|| Error::invalid("matrix dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::invalid(format!(
            "{d}x{n} matrix needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    if d == 0 || n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let body = &bytes[20..];
    Ok(DMatrix::from_fn(d, n, |i, j| {
        let k = 8 * (i * n + j);
        f64::from_le_bytes(body[k..k + 8].try_into().expect("8 bytes"))
    }))
}

pub fn write_matrix_bin(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    fs::write(path, matrix_to_bytes(a)).map_err(|e| io_err(path, e))
}

pub fn read_matrix_bin(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    matrix_from_bytes(&bytes).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Binary if the file starts with the magic, CSV otherwise.
pub fn read_matrix(path: &Path, has_header: bool) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(MATRIX_MAGIC) {
        matrix_from_bytes(&bytes).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    } else {
        read_matrix_csv(path, has_header)
    }
}

pub fn read_affine_csv(path: &Path, has_header: bool) -> Result<AffineLosses> {
    let rows = read_csv_rows(path, has_header)?;
    if rows[0].len() < 2 {
        return Err(Error::invalid(format!("{}: need an offset and at least one slope", path.display())));
    }
    let b = rows.iter().map(|r| r[0]).collect();
    let a = rows.iter().map(|r| r[1..].to_vec()).collect();
    AffineLosses::new(a, b)
}

pub fn write_affine_csv(path: &Path, losses: &AffineLosses) -> Result<()> {
    let rows: Vec<Vec<f64>> = losses
        .a
        .iter()
        .zip(&losses.b)
        .map(|(a, b)| std::iter::once(*b).chain(a.iter().copied()).collect())
        .collect();
    write_csv_rows(path, None, &rows)
}

/// `(features, labels)` from rows `label, x_1, …, x_d`.
pub fn read_labelled_csv(path: &Path, has_header: bool) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let rows = read_csv_rows(path, has_header)?;
    if rows[0].len() < 2 {
        return Err(Error::invalid(format!("{}: need a label and at least one feature", path.display())));
    }
    let labels = rows.iter().map(|r| r[0]).collect();
    let features = rows.iter().map(|r| r[1..].to_vec()).collect();
    Ok((features, labels))
}
