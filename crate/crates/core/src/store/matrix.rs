use std::io::Write;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"PATL";
pub const MATRIX_VERSION: u32 = 1;
pub const MATRIX_HEADER_LEN: usize = 16;
/// Allowed deviation of a row's L2 norm from 1.
pub const NORM_TOLERANCE: f32 = 1e-4;

/// Row-major matrix of L2-normalized `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Validates shape, finiteness and row normalization.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        let m = Self::from_raw(dim, data)?;
        m.check_normalized()?;
        Ok(m)
    }

    /// Normalizes every row in place before validating. Rows with zero norm
    /// are rejected.
    pub fn from_unnormalized(dim: usize, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Param("dim must be positive".into()));
        }
        for (i, row) in data.chunks_mut(dim).enumerate() {
            if !normalize(row) {
                return Err(Error::Invalid(format!("row {i} has zero or non-finite norm")));
            }
        }
        Self::new(dim, data)
    }

    /// Shape and finiteness checks only.
    fn from_raw(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Param("dim must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Invalid(format!(
                "data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite value in row {}", i / dim)));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            data: Vec::new(),
        }
    }

    pub fn check_normalized(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Invalid(format!("row {i} is not normalized (norm {n})")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Copies the listed rows into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.count());
        Self {
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
        }
    }
}

pub(crate) fn norm(row: &[f32]) -> f32 {
    row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt() as f32
}

/// Scales `row` to unit length. Returns false when that is impossible.
pub fn normalize(row: &mut [f32]) -> bool {
    let n = row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / n) as f32;
    }
    true
}

/// Writes any row-major `f32` matrix with the `PATL` header. Used for both
/// embeddings and 2D positions.
pub fn write_f32_matrix(path: &Path, dim: usize, data: &[f32]) -> Result<u64> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Invalid(format!(
            "data length {} does not fit dim {dim}",
            data.len()
        )));
    }
    let count = u32::try_from(data.len() / dim)
        .map_err(|_| Error::Invalid("row count exceeds u32".into()))?;
    let dim32 = u32::try_from(dim).map_err(|_| Error::Invalid("dim exceeds u32".into()))?;
    write_atomic(path, |w| {
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&MATRIX_VERSION.to_le_bytes())?;
        w.write_all(&dim32.to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    })
}

/// Reads a `PATL` file, returning `(dim, data)`.
pub fn read_f32_matrix(path: &Path) -> Result<(usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f32_matrix(&bytes)
}

pub(crate) fn decode_f32_matrix(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    if bytes.len() < MATRIX_HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[0..4] != MATRIX_MAGIC {
        return Err(Error::Format("bad magic, expected PATL".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != MATRIX_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = word(8) as usize;
    let count = word(12) as usize;
    if dim == 0 {
        return Err(Error::Format("dim is zero".into()));
    }
    let expected = dim
        .checked_mul(count)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let payload = &bytes[MATRIX_HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} of {expected} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dim, data))
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<u64> {
    matrix.check_normalized()?;
    write_f32_matrix(path, matrix.dim, &matrix.data)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let (dim, data) = read_f32_matrix(path)?;
    let m = EmbeddingMatrix::from_raw(dim, data).map_err(|e| Error::Format(e.to_string()))?;
    m.check_normalized().map_err(|e| Error::Format(e.to_string()))?;
    Ok(m)
}
