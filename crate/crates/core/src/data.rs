//! Dataset files and per-column standardization.
//!
//! Two formats:
//!
//! * `raw-f32`: magic `LRBD`, `u32` row count `N`, `u32` column count `I`,
//!   then `N * I` row-major `f32`, all little-endian.
//! * `csv`: numeric fields, one row per line, no header.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"LRBD";
const RAW_HEADER_LEN: usize = 12;

/// Standard deviations below this count as a constant column.
pub const CONSTANT_COLUMN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    RawF32,
    Csv,
}

impl DataFormat {
    /// `.csv` means CSV, anything else raw-f32.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::RawF32,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw-f32" | "raw" | "f32" => Ok(DataFormat::RawF32),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::InvalidParameter(format!("unknown data format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub per_column_mean: DVector<f64>,
    pub per_column_std: DVector<f64>,
}

impl Normalization {
    pub fn identity(columns: usize) -> Self {
        Normalization {
            per_column_mean: DVector::zeros(columns),
            per_column_std: DVector::from_element(columns, 1.0),
        }
    }

    /// Column means and population standard deviations; constant columns
    /// get a standard deviation of 1.
    pub fn fit(matrix: &DMatrix<f64>) -> Self {
        let n = matrix.nrows().max(1) as f64;
        let mean = DVector::from_fn(matrix.ncols(), |j, _| matrix.column(j).sum() / n);
        let std = DVector::from_fn(matrix.ncols(), |j, _| {
            let m = mean[j];
            let var = matrix.column(j).iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > CONSTANT_COLUMN_STD {
                sd
            } else {
                1.0
            }
        });
        Normalization {
            per_column_mean: mean,
            per_column_std: std,
        }
    }

    pub fn apply(&self, matrix: &mut DMatrix<f64>) {
        for (j, mut col) in matrix.column_iter_mut().enumerate() {
            let (m, s) = (self.per_column_mean[j], self.per_column_std[j]);
            col.apply(|x| *x = (*x - m) / s);
        }
    }

    pub fn invert(&self, matrix: &mut DMatrix<f64>) {
        for (j, mut col) in matrix.column_iter_mut().enumerate() {
            let (m, s) = (self.per_column_mean[j], self.per_column_std[j]);
            col.apply(|x| *x = *x * s + m);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_writer(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        writer.write_record(["mean", "std"])?;
        for (m, s) in self.per_column_mean.iter().zip(self.per_column_std.iter()) {
            writer.write_record([m.to_string(), s.to_string()])?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(fs::File::open(path).map_err(|e| Error::io(path, e))?);
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |k: usize| -> Result<f64> {
                record
                    .get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::format(path, format!("line {line}: expected `mean,std`")))
            };
            mean.push(field(0)?);
            std.push(field(1)?);
        }
        Ok(Normalization {
            per_column_mean: DVector::from_vec(mean),
            per_column_std: DVector::from_vec(std),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N x I`, already normalized.
    pub matrix: DMatrix<f64>,
    pub normalization: Normalization,
}

impl Dataset {
    /// Standardizes `raw` with its own column statistics.
    pub fn from_raw(mut raw: DMatrix<f64>) -> Self {
        let normalization = Normalization::fit(&raw);
        normalization.apply(&mut raw);
        Dataset {
            matrix: raw,
            normalization,
        }
    }

    /// Applies previously stored statistics.
    pub fn with_normalization(mut raw: DMatrix<f64>, normalization: Normalization) -> Result<Self> {
        if normalization.per_column_mean.len() != raw.ncols() {
            return Err(Error::DimensionMismatch {
                what: "normalization record",
                expected: raw.ncols(),
                found: normalization.per_column_mean.len(),
            });
        }
        normalization.apply(&mut raw);
        Ok(Dataset {
            matrix: raw,
            normalization,
        })
    }

    /// Rows as vectors, which is what the samplers and trainer consume.
    pub fn rows(&self) -> Vec<DVector<f64>> {
        rows_of(&self.matrix)
    }

    pub fn num_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_columns(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn rows_of(matrix: &DMatrix<f64>) -> Vec<DVector<f64>> {
    matrix.row_iter().map(|r| r.transpose()).collect()
}

pub fn matrix_from_rows(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Loads a file and standardizes every column.
pub fn ingest(path: &Path, format: DataFormat) -> Result<Dataset> {
    Ok(Dataset::from_raw(read_matrix(path, format)?))
}

pub fn read_matrix(path: &Path, format: DataFormat) -> Result<DMatrix<f64>> {
    match format {
        DataFormat::RawF32 => read_raw(path),
        DataFormat::Csv => read_csv(path),
    }
}

pub fn write_matrix(path: &Path, matrix: &DMatrix<f64>, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::RawF32 => write_raw(path, matrix),
        DataFormat::Csv => write_csv(path, matrix),
    }
}

fn read_raw(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::format(path, format!("file is {} bytes, header needs {RAW_HEADER_LEN}", bytes.len())));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::format(path, "offset 0: bad magic, expected `LRBD`"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let i = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(i)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(RAW_HEADER_LEN))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "offset {}: header says {n} x {i} (payload ends at byte {expected}), file has {} bytes",
                bytes.len().min(expected),
                bytes.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(n * i);
    for (k, chunk) in bytes[RAW_HEADER_LEN..].chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(Error::format(path, format!("offset {}: non-finite value", RAW_HEADER_LEN + 4 * k)));
        }
        values.push(x as f64);
    }
    Ok(DMatrix::from_row_slice(n, i, &values))
}

fn write_raw(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let too_big = || Error::InvalidParameter("matrix too large for the raw-f32 header".into());
    let n = u32::try_from(matrix.nrows()).map_err(|_| too_big())?;
    let i = u32::try_from(matrix.ncols()).map_err(|_| too_big())?;
    let mut bytes = Vec::with_capacity(RAW_HEADER_LEN + 4 * matrix.len());
    bytes.extend_from_slice(RAW_MAGIC);
    bytes.extend_from_slice(&n.to_le_bytes());
    bytes.extend_from_slice(&i.to_le_bytes());
    for row in matrix.row_iter() {
        for &x in row.iter() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::format(path, format!("line {line}: expected {w} fields, found {}", record.len())));
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let x: f64 = field.parse().map_err(|_| {
                Error::format(path, format!("line {line}, column {}: `{field}` is not a number", col + 1))
            })?;
            if !x.is_finite() {
                return Err(Error::format(path, format!("line {line}, column {}: non-finite value", col + 1)));
            }
            values.push(x);
        }
        rows += 1;
    }
    let width = width.ok_or(Error::EmptyData)?;
    Ok(DMatrix::from_row_slice(rows, width, &values))
}

fn write_csv(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for row in matrix.row_iter() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
