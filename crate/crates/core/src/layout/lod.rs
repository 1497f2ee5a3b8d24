use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::grid::Bounds;
use super::zoom::ZoomModel;
use crate::error::{Error, Result};
use crate::hash::{hash_u64s, unit_f64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LodParams {
    /// Integer zoom levels at which individual points may first appear.
    pub zoom_range: (u32, u32),
    /// Expected visible points per tile, at every level below the top one.
    pub tile_budget: usize,
    pub preview_fraction: f64,
    pub seed: u64,
}

impl Default for LodParams {
    fn default() -> Self {
        Self {
            zoom_range: (5, 8),
            tile_budget: 256,
            preview_fraction: 1.0 / 500.0,
            seed: 0,
        }
    }
}

impl LodParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.zoom_range;
        if lo > hi || hi > 24 {
            return Err(Error::Param(format!("bad zoom range {lo}..{hi}")));
        }
        if self.tile_budget == 0 {
            return Err(Error::Param("tile_budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.preview_fraction) {
            return Err(Error::Param("preview_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodAssignment {
    pub min_zoom: Vec<f32>,
    pub preview: Vec<bool>,
}

impl LodAssignment {
    pub fn visible(&self, i: usize, zoom: f64) -> bool {
        self.min_zoom[i] as f64 <= zoom
    }
}

/// Seeded level-of-detail thinning. Each point draws `u ∈ [0, 1)` from a
/// hash of its index; it first renders at the lowest level `z` where
/// `u · c_z ≤ budget`, `c_z` being the population of its tile at `z`, and
/// always at the top level. Tile populations shrink as `z` grows, so the
/// visible sets are nested and every tile below the top level expects at
/// most `budget` points. Previews go to a seeded `preview_fraction` of the
/// points that have an image.
pub fn assign_lod(positions: &[[f32; 2]], has_image: &[bool], params: &LodParams) -> Result<LodAssignment> {
    params.validate()?;
    if positions.len() != has_image.len() {
        return Err(Error::Invalid(format!(
            "{} positions but {} image flags",
            positions.len(),
            has_image.len()
        )));
    }
    let zoom = ZoomModel {
        max_zoom: params.zoom_range.1 as f64,
        ..ZoomModel::default()
    };
    let world = zoom.world(&Bounds::of(positions));
    let (lo, hi) = params.zoom_range;
    let tiles: Vec<Vec<(u64, u64)>> = (lo..hi)
        .map(|z| crate::parallel::map_slice(positions, |p| zoom.tile_of(&world, z, *p)))
        .collect();
    let populations: Vec<HashMap<(u64, u64), usize>> = tiles
        .iter()
        .map(|level| {
            let mut m = HashMap::new();
            for t in level {
                *m.entry(*t).or_insert(0usize) += 1;
            }
            m
        })
        .collect();
    let budget = params.tile_budget as f64;
    let min_zoom: Vec<f32> = crate::parallel::map_range(positions.len(), |i| {
        let u = unit_f64(hash_u64s(params.seed, &[0x10d, i as u64]));
        for (level, z) in (lo..hi).enumerate() {
            let c = populations[level][&tiles[level][i]] as f64;
            if u * c <= budget {
                return z as f32;
            }
        }
        hi as f32
    });
    let preview = (0..positions.len())
        .map(|i| {
            has_image[i]
                && params.preview_fraction > 0.0
                && unit_f64(hash_u64s(params.seed, &[0x9e7, i as u64])) < params.preview_fraction
        })
        .collect();
    Ok(LodAssignment { min_zoom, preview })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points(n: usize) -> Vec<[f32; 2]> {
        (0..n).map(|i| [(i % 100) as f32, (i / 100) as f32]).collect()
    }

    #[test]
    fn preview_fraction_extremes() {
        let pts = grid_points(1000);
        let imgs: Vec<bool> = (0..1000).map(|i| i % 3 != 0).collect();
        let none = assign_lod(&pts, &imgs, &LodParams { preview_fraction: 0.0, ..Default::default() }).unwrap();
        assert!(none.preview.iter().all(|p| !p));
        let all = assign_lod(&pts, &imgs, &LodParams { preview_fraction: 1.0, ..Default::default() }).unwrap();
        assert_eq!(all.preview, imgs);
    }

    #[test]
    fn visibility_is_nested_and_budgeted() {
        let pts = grid_points(10_000);
        let params = LodParams {
            zoom_range: (0, 6),
            tile_budget: 50,
            ..Default::default()
        };
        let lod = assign_lod(&pts, &vec![false; pts.len()], &params).unwrap();
        let visible = |z: f64| (0..pts.len()).filter(|&i| lod.visible(i, z)).collect::<Vec<_>>();
        for z in 0..6 {
            let a = visible(z as f64);
            let b: std::collections::HashSet<_> = visible(z as f64 + 1.0).into_iter().collect();
            assert!(a.iter().all(|i| b.contains(i)));
        }
        assert_eq!(visible(6.0).len(), pts.len());
        // One tile at zoom 0: expected 50, allow sampling slack.
        let n0 = visible(0.0).len();
        assert!(n0 <= 80, "{n0} visible at zoom 0");
    }

    #[test]
    fn mismatched_lengths() {
        assert!(assign_lod(&[[0.0, 0.0]], &[], &LodParams::default()).is_err());
    }
}
