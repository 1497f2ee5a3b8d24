use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::zoom::ZoomModel;
use crate::ann::distance::{l2_sq, nearest};
use crate::ann::kmeans::{kmeans, KMeansParams};
use crate::error::{Error, Result};
use crate::hash::hash_u64s;
use crate::pipeline::TextGenerator;

/// Records consulted when naming an anchor.
pub const LABEL_NEIGHBORS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAnchor {
    pub position: [f32; 2],
    pub text: String,
    /// 1 = most populous.
    pub rank: usize,
    pub min_zoom: f32,
    pub population: usize,
}

/// Anchors at the 2D k-means centroids, named by `backend` from the subjects
/// of the [`LABEL_NEIGHBORS`] nearest records and ranked by how many records
/// fall closest to them.
pub fn place_labels(
    positions: &[[f32; 2]],
    subjects: &[String],
    k_anchors: usize,
    backend: &dyn TextGenerator,
    seed: u64,
    zoom: &ZoomModel,
) -> Result<Vec<LabelAnchor>> {
    if positions.len() != subjects.len() {
        return Err(Error::Invalid(format!(
            "{} positions but {} subjects",
            positions.len(),
            subjects.len()
        )));
    }
    if k_anchors == 0 {
        return Err(Error::Param("k_anchors must be at least 1".into()));
    }
    let distinct: HashSet<(u32, u32)> = positions.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
    if k_anchors > distinct.len() {
        return Err(Error::Invalid(format!(
            "k_anchors = {k_anchors} exceeds the {} distinct positions",
            distinct.len()
        )));
    }
    let flat: Vec<f32> = positions.iter().flat_map(|p| [p[0], p[1]]).collect();
    let params = KMeansParams {
        max_points_per_centroid: positions.len(),
        ..KMeansParams::new(k_anchors, 50, seed)
    };
    let centroids = kmeans(&flat, 2, &params)?;

    let mut population = vec![0usize; k_anchors];
    for p in positions {
        population[nearest(p, &centroids, 2).0] += 1;
    }

    let named: Vec<Result<String>> = crate::parallel::map_range(k_anchors, |a| {
        let c = &centroids[a * 2..a * 2 + 2];
        let mut order: Vec<(f32, usize)> = positions.iter().enumerate().map(|(i, p)| (l2_sq(p, c), i)).collect();
        let take = LABEL_NEIGHBORS.min(order.len());
        let cmp = |x: &(f32, usize), y: &(f32, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
        if order.len() > take {
            order.select_nth_unstable_by(take - 1, cmp);
            order.truncate(take);
        }
        order.sort_unstable_by(cmp);
        let near: Vec<String> = order.iter().map(|&(_, i)| subjects[i].clone()).collect();
        backend.label(&near, hash_u64s(seed, &[0x1abe1, a as u64]))
    });
    let names = named.into_iter().collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..k_anchors).collect();
    order.sort_by(|&x, &y| population[y].cmp(&population[x]).then(x.cmp(&y)));
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(r, a)| LabelAnchor {
            position: [centroids[a * 2], centroids[a * 2 + 1]],
            text: names[a].clone(),
            rank: r + 1,
            min_zoom: zoom.label_min_zoom(r + 1, k_anchors) as f32,
            population: population[a],
        })
        .collect())
}
