use serde::{Deserialize, Serialize};

use super::grid::{Bounds, DensityGrid};
use crate::error::{Error, Result};

pub const TILE_SIZE: usize = 256;

/// Square region of map space. Tile row 0 sits at the minimum y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileRect {
    pub min_x: f64,
    pub min_y: f64,
    pub size: f64,
}

impl TileRect {
    pub fn bounds(&self) -> Bounds {
        Bounds {
            min_x: self.min_x,
            min_y: self.min_y,
            max_x: self.min_x + self.size,
            max_y: self.min_y + self.size,
        }
    }
}

/// Continuous zoom `z ∈ [0, max_zoom]`. The density layer is opaque up to
/// `fade_start` and fades linearly to zero at `fade_end`; label ranks are
/// spread over `[0, label_zoom_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoomModel {
    pub max_zoom: f64,
    pub fade_start: f64,
    pub fade_end: f64,
    pub label_zoom_max: f64,
}

impl Default for ZoomModel {
    fn default() -> Self {
        Self {
            max_zoom: 8.0,
            fade_start: 5.0,
            fade_end: 6.5,
            label_zoom_max: 6.0,
        }
    }
}

impl ZoomModel {
    pub fn density_opacity(&self, z: f64) -> f64 {
        if z <= self.fade_start {
            1.0
        } else if z >= self.fade_end {
            0.0
        } else {
            1.0 - (z - self.fade_start) / (self.fade_end - self.fade_start)
        }
    }

    /// Zoom at which the rank-`rank` anchor of `total` appears:
    /// `log2(rank + 1)` mapped linearly so rank 1 shows at 0 and the last
    /// rank at `label_zoom_max`.
    pub fn label_min_zoom(&self, rank: usize, total: usize) -> f64 {
        if total <= 1 || rank <= 1 {
            return 0.0;
        }
        let lo = 2f64.log2();
        let hi = ((total + 1) as f64).log2();
        let r = ((rank.min(total) + 1) as f64).log2();
        self.label_zoom_max * (r - lo) / (hi - lo)
    }

    /// The square world enclosing `bounds`, centred on them.
    pub fn world(&self, bounds: &Bounds) -> TileRect {
        let (w, h) = bounds.extent();
        let size = w.max(h);
        let cx = bounds.min_x + (bounds.max_x - bounds.min_x) / 2.0;
        let cy = bounds.min_y + (bounds.max_y - bounds.min_y) / 2.0;
        TileRect {
            min_x: cx - size / 2.0,
            min_y: cy - size / 2.0,
            size,
        }
    }

    pub fn tile_rect(&self, world: &TileRect, z: u32, x: u32, y: u32) -> Result<TileRect> {
        if z as f64 > self.max_zoom.floor() || z > 30 {
            return Err(Error::Invalid(format!("zoom {z} exceeds max zoom {}", self.max_zoom)));
        }
        let n = 1u64 << z;
        if x as u64 >= n || y as u64 >= n {
            return Err(Error::Invalid(format!("tile {x}/{y} outside the {n}x{n} grid at zoom {z}")));
        }
        let size = world.size / n as f64;
        Ok(TileRect {
            min_x: world.min_x + x as f64 * size,
            min_y: world.min_y + y as f64 * size,
            size,
        })
    }

    /// Integer tile coordinates of a map point at zoom `z`.
    pub fn tile_of(&self, world: &TileRect, z: u32, p: [f32; 2]) -> (u64, u64) {
        let n = 1u64 << z;
        let f = |v: f64, min: f64| {
            let t = ((v - min) / world.size * n as f64).floor();
            if t.is_nan() || t < 0.0 {
                0
            } else {
                (t as u64).min(n - 1)
            }
        };
        (f(p[0] as f64, world.min_x), f(p[1] as f64, world.min_y))
    }
}

/// Grayscale `size × size` raster of `rect`: each pixel sums the grid bins
/// it covers, intensity `log1p(count) / log1p(tile max)`, darker = denser.
/// `prefix` comes from [`DensityGrid::prefix_sums`].
pub fn render_density_tile(grid: &DensityGrid, prefix: &[u64], rect: &TileRect, size: usize) -> Vec<u8> {
    let r = grid.resolution;
    let (w, h) = grid.bounds.extent();
    let to_bin = |v: f64, min: f64, ext: f64| (v - min) / ext * r as f64;
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let range = |a: f64, b: f64| -> (usize, usize) {
        let (a, b) = (snap(a), snap(b));
        let lo = a.floor().clamp(0.0, r as f64) as usize;
        let hi = b.ceil().clamp(0.0, r as f64) as usize;
        (lo, hi)
    };
    let px = rect.size / size as f64;
    let xs: Vec<(usize, usize)> = (0..size)
        .map(|i| {
            let a = to_bin(rect.min_x + i as f64 * px, grid.bounds.min_x, w);
            let b = to_bin(rect.min_x + (i + 1) as f64 * px, grid.bounds.min_x, w);
            range(a, b)
        })
        .collect();
    let ys: Vec<(usize, usize)> = (0..size)
        .map(|j| {
            let a = to_bin(rect.min_y + j as f64 * px, grid.bounds.min_y, h);
            let b = to_bin(rect.min_y + (j + 1) as f64 * px, grid.bounds.min_y, h);
            range(a, b)
        })
        .collect();
    let stride = r + 1;
    let sum = |(x0, x1): (usize, usize), (y0, y1): (usize, usize)| -> u64 {
        if x0 >= x1 || y0 >= y1 {
            return 0;
        }
        prefix[y1 * stride + x1] + prefix[y0 * stride + x0] - prefix[y0 * stride + x1] - prefix[y1 * stride + x0]
    };
    let counts: Vec<u64> = ys.iter().flat_map(|&yr| xs.iter().map(move |&xr| (xr, yr))).map(|(xr, yr)| sum(xr, yr)).collect();
    let max = counts.iter().copied().max().unwrap_or(0);
    let denom = (max as f64).ln_1p();
    counts
        .iter()
        .map(|&c| {
            if max == 0 {
                255
            } else {
                255 - (255.0 * (c as f64).ln_1p() / denom).round() as u8
            }
        })
        .collect()
}
