//! Dense f64 grid plus a simple binary file format for fixtures:
//! magic "GRD1", u64 LE rows, u64 LE cols, then rows*cols f64 LE values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DspError;

const MAGIC: &[u8; 4] = b"GRD1";

/// Row-major 2-D grid of f64. For spectrograms rows are frequency bins
/// and columns are time frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DspError> {
        if data.len() != rows * cols {
            return Err(DspError::Invalid {
                op: "grid",
                what: format!("{rows}x{cols} grid needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<(), DspError> {
    let err = |what: String| DspError::GridFile { path: path.display().to_string(), what };
    let mut w = BufWriter::new(File::create(path).map_err(|e| err(e.to_string()))?);
    w.write_all(MAGIC).map_err(|e| err(e.to_string()))?;
    w.write_all(&(grid.rows as u64).to_le_bytes()).map_err(|e| err(e.to_string()))?;
    w.write_all(&(grid.cols as u64).to_le_bytes()).map_err(|e| err(e.to_string()))?;
    for v in &grid.data {
        w.write_all(&v.to_le_bytes()).map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn read_grid(path: &Path) -> Result<Grid, DspError> {
    let err = |what: String| DspError::GridFile { path: path.display().to_string(), what };
    let mut r = BufReader::new(File::open(path).map_err(|e| err(e.to_string()))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| err(e.to_string()))?;
    if &magic != MAGIC {
        return Err(err(format!("bad magic {magic:?}")));
    }
    let mut u = [0u8; 8];
    r.read_exact(&mut u).map_err(|e| err(e.to_string()))?;
    let rows = u64::from_le_bytes(u) as usize;
    r.read_exact(&mut u).map_err(|e| err(e.to_string()))?;
    let cols = u64::from_le_bytes(u) as usize;
    let n = rows.checked_mul(cols).ok_or_else(|| err("dimension overflow".into()))?;
    let mut data = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(|e| err(e.to_string()))?;
        data.push(f64::from_le_bytes(b));
    }
    // trailing bytes mean the header lied about the shape
    if r.read(&mut b).map_err(|e| err(e.to_string()))? != 0 {
        return Err(err("trailing bytes after payload".into()));
    }
    Ok(Grid { rows, cols, data })
}
