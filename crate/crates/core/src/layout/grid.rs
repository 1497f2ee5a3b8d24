use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::write_atomic;

pub const GRID_MAGIC: &[u8; 4] = b"PGRD";
pub const GRID_VERSION: u32 = 1;
pub const GRID_RESOLUTION: usize = 2000;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds {
        min_x: 0.0,
        min_y: 0.0,
        max_x: 1.0,
        max_y: 1.0,
    };

    /// Tight bounds of `positions`; the unit square when empty.
    pub fn of(positions: &[[f32; 2]]) -> Self {
        if positions.is_empty() {
            return Self::UNIT;
        }
        positions.iter().fold(
            Bounds {
                min_x: f64::INFINITY,
                min_y: f64::INFINITY,
                max_x: f64::NEG_INFINITY,
                max_y: f64::NEG_INFINITY,
            },
            |b, p| Bounds {
                min_x: b.min_x.min(p[0] as f64),
                min_y: b.min_y.min(p[1] as f64),
                max_x: b.max_x.max(p[0] as f64),
                max_y: b.max_y.max(p[1] as f64),
            },
        )
    }

    /// Width and height, with a zero-extent axis counted as 1.
    pub fn extent(&self) -> (f64, f64) {
        let w = self.max_x - self.min_x;
        let h = self.max_y - self.min_y;
        (if w > 0.0 { w } else { 1.0 }, if h > 0.0 { h } else { 1.0 })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn intersects(&self, other: &Bounds) -> bool {
        self.min_x <= other.max_x && other.min_x <= self.max_x && self.min_y <= other.max_y && other.min_y <= self.max_y
    }
}

/// Row-major `resolution × resolution` histogram; row index is the y bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub resolution: usize,
    pub bounds: Bounds,
    pub counts: Vec<u32>,
}

impl DensityGrid {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn get(&self, bx: usize, by: usize) -> u32 {
        self.counts[by * self.resolution + bx]
    }

    /// Bin index along one axis: half-open bins, clamped to the edges.
    pub fn bin(&self, v: f64, min: f64, extent: f64) -> usize {
        let b = ((v - min) / extent * self.resolution as f64).floor();
        if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(self.resolution - 1)
        }
    }

    pub fn bin_of(&self, p: [f32; 2]) -> (usize, usize) {
        let (w, h) = self.bounds.extent();
        (
            self.bin(p[0] as f64, self.bounds.min_x, w),
            self.bin(p[1] as f64, self.bounds.min_y, h),
        )
    }

    /// Inclusive-exclusive prefix sums, `(resolution + 1)²` entries, for
    /// O(1) rectangle sums.
    pub fn prefix_sums(&self) -> Vec<u64> {
        let r = self.resolution;
        let mut s = vec![0u64; (r + 1) * (r + 1)];
        for y in 0..r {
            let mut row = 0u64;
            for x in 0..r {
                row += self.counts[y * r + x] as u64;
                s[(y + 1) * (r + 1) + x + 1] = s[y * (r + 1) + x + 1] + row;
            }
        }
        s
    }
}

/// Bins `positions` into a `resolution²` grid over their tight bounds.
pub fn density_grid(positions: &[[f32; 2]], resolution: usize) -> Result<DensityGrid> {
    if resolution == 0 {
        return Err(Error::Param("grid resolution must be at least 1".into()));
    }
    if positions.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Invalid("positions must be finite".into()));
    }
    let mut grid = DensityGrid {
        resolution,
        bounds: Bounds::of(positions),
        counts: vec![0; resolution * resolution],
    };
    let bins: Vec<usize> = crate::parallel::map_slice(positions, |p| {
        let (bx, by) = grid.bin_of(*p);
        by * resolution + bx
    });
    for b in bins {
        grid.counts[b] += 1;
    }
    Ok(grid)
}

pub fn write_grid(grid: &DensityGrid, path: &Path) -> Result<u64> {
    write_atomic(path, |w| {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        w.write_all(&(grid.resolution as u32).to_le_bytes())?;
        w.write_all(&(grid.resolution as u32).to_le_bytes())?;
        for v in [grid.bounds.min_x, grid.bounds.min_y, grid.bounds.max_x, grid.bounds.max_y] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(grid.counts.len() * 4);
        for c in &grid.counts {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)
    })
}

pub fn read_grid(path: &Path) -> Result<DensityGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

pub fn decode_grid(bytes: &[u8]) -> Result<DensityGrid> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("grid file shorter than its header".into()));
    }
    if &bytes[..4] != GRID_MAGIC {
        return Err(Error::Format("bad grid magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != GRID_VERSION {
        return Err(Error::Format(format!("unsupported grid version {version}")));
    }
    let (w, h) = (u32_at(8) as usize, u32_at(12) as usize);
    if w != h || w == 0 {
        return Err(Error::Format(format!("grid must be square and non-empty, got {w}x{h}")));
    }
    let bounds = Bounds {
        min_x: f64_at(16),
        min_y: f64_at(24),
        max_x: f64_at(32),
        max_y: f64_at(40),
    };
    let body = &bytes[HEADER_LEN..];
    if body.len() != w * h * 4 {
        return Err(Error::Format(format!(
            "grid body is {} bytes, expected {}",
            body.len(),
            w * h * 4
        )));
    }
    let counts = body
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DensityGrid {
        resolution: w,
        bounds,
        counts,
    })
}
