//! Tabulated joint samples. Columns are `y_1..y_d`, then `x1_1..x1_{d_1}`,
//! `x2_1..`, and so on.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

const BINARY_MAGIC: &[u8; 8] = b"MFPOOL01";

#[derive(Clone, Debug, PartialEq)]
pub struct PoolSource {
    pub table: Array2<f64>,
    pub replacement: bool,
    dims: Vec<usize>,
}

/// Expected header for a pool with the given model dimensions.
pub fn pool_column_names(dims: &[usize]) -> Vec<String> {
    let mut names = Vec::new();
    for (model, &d) in dims.iter().enumerate() {
        for c in 1..=d {
            if model == 0 {
                names.push(format!("y_{c}"));
            } else {
                names.push(format!("x{model}_{c}"));
            }
        }
    }
    names
}

impl PoolSource {
    /// Wraps a table whose columns follow the layout of `dims`.
    pub fn new(table: Array2<f64>, dims: &[usize], replacement: bool) -> Result<Self> {
        let source = PoolSource {
            table,
            replacement,
            dims: dims.to_vec(),
        };
        source.validate(dims)?;
        Ok(source)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rows(&self) -> usize {
        self.table.nrows()
    }

    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        let cols: usize = dims.iter().sum();
        if self.table.ncols() != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                found: self.table.ncols(),
            });
        }
        let min_rows = dims[1..].iter().sum::<usize>() + 2;
        if self.table.nrows() < min_rows {
            return Err(Error::InvalidConfig(format!(
                "pool has {} rows, at least {min_rows} required",
                self.table.nrows()
            )));
        }
        if self.table.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pool table"));
        }
        Ok(())
    }

    /// Loads a CSV (by extension) or binary pool file.
    pub fn load(path: &Path, dims: &[usize], replacement: bool) -> Result<Self> {
        let table = if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            read_csv(path, dims)?
        } else {
            read_binary(path, dims.iter().sum())?
        };
        PoolSource::new(table, dims, replacement)
    }

    pub fn write_csv(&self, path: &Path, dims: &[usize]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(pool_column_names(dims))?;
        for row in self.table.rows() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Binary layout: magic `MFPOOL01`, `u64` rows, `u64` cols, then
    /// row-major little-endian `f64` values.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(BINARY_MAGIC).map_err(io)?;
        w.write_all(&(self.table.nrows() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.table.ncols() as u64).to_le_bytes()).map_err(io)?;
        for v in self.table.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Copies the requested rows of each model's columns into `blocks`.
    pub(crate) fn gather<T: Real>(&self, rows: &[usize], models: &[usize], blocks: &mut [Array2<T>]) {
        for (b, &m) in models.iter().enumerate() {
            let start: usize = self.dims[..m].iter().sum();
            let width = self.dims[m];
            for (r, &row) in rows.iter().enumerate() {
                for c in 0..width {
                    blocks[b][[r, c]] = T::of(self.table[[row, start + c]]);
                }
            }
        }
    }
}

fn read_csv(path: &Path, dims: &[usize]) -> Result<Array2<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let expected = pool_column_names(dims);
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() != expected.len() {
        return Err(Error::DimensionMismatch {
            expected: expected.len(),
            found: header.len(),
        });
    }
    if header != expected {
        return Err(Error::InvalidConfig(format!(
            "pool header {header:?} does not match expected {expected:?}"
        )));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        if record.len() != expected.len() {
            return Err(Error::DimensionMismatch {
                expected: expected.len(),
                found: record.len(),
            });
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("unparseable pool value {field:?} in {}", path.display()))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, expected.len()), values).expect("row lengths checked"))
}

fn read_binary(path: &Path, cols: usize) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::InvalidConfig(format!("{} is not a pool file", path.display())));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word).map_err(io)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(io)?;
    let file_cols = u64::from_le_bytes(word) as usize;
    if file_cols != cols {
        return Err(Error::DimensionMismatch {
            expected: cols,
            found: file_cols,
        });
    }
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut word).map_err(io)?;
        values.push(f64::from_le_bytes(word));
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("size read from header"))
}
