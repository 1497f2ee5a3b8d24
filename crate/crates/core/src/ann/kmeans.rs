//! Lloyd's k-means with k-means++ seeding.
//!
//! Assignment runs through [`crate::parallel`]; centroid updates are
//! accumulated sequentially in f64, so results are bit-identical in either
//! execution mode for a fixed seed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::distance::{l2_sq, nearest};
use crate::error::{Error, Result};
use crate::parallel;

/// Training subsamples to at most this many points per centroid.
pub const MAX_POINTS_PER_CENTROID: usize = 256;

const SPLIT_EPS: f32 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub iters: usize,
    pub seed: u64,
    pub max_points_per_centroid: usize,
}

impl KMeansParams {
    pub fn new(k: usize, iters: usize, seed: u64) -> Self {
        Self {
            k,
            iters,
            seed,
            max_points_per_centroid: MAX_POINTS_PER_CENTROID,
        }
    }
}

/// Returns `k × dim` centroids, row-major.
pub fn kmeans(data: &[f32], dim: usize, params: &KMeansParams) -> Result<Vec<f32>> {
    let k = params.k;
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Param("k-means data does not fit dim".into()));
    }
    let n = data.len() / dim;
    if k == 0 {
        return Err(Error::Param("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Param(format!("{n} training points for {k} centroids")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let cap = params.max_points_per_centroid.saturating_mul(k).max(k);
    let owned;
    let points: &[f32] = if n > cap {
        let mut idx = sample(&mut rng, n, cap).into_vec();
        idx.sort_unstable();
        let mut buf = Vec::with_capacity(cap * dim);
        for i in idx {
            buf.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        owned = buf;
        &owned
    } else {
        data
    };
    let n = points.len() / dim;

    let mut centroids = plus_plus_init(points, dim, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..params.iters {
        let next: Vec<usize> = parallel::map_range(n, |i| {
            nearest(&points[i * dim..(i + 1) * dim], &centroids, dim).0
        });
        let changed = next != assign;
        assign = next;
        update_centroids(points, dim, &assign, &mut centroids);
        if !changed {
            break;
        }
    }
    Ok(centroids)
}

fn plus_plus_init(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f32> = parallel::map_range(n, |i| l2_sq(row(i), row(first)));
    for _ in 1..k {
        let total: f64 = d2.iter().map(|v| *v as f64).sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += *v as f64;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = row(pick).to_vec();
        let updated: Vec<f32> = parallel::map_range(n, |i| d2[i].min(l2_sq(row(i), &c)));
        d2 = updated;
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn update_centroids(points: &[f32], dim: usize, assign: &[usize], centroids: &mut [f32]) {
    let k = centroids.len() / dim;
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &c) in assign.iter().enumerate() {
        counts[c] += 1;
        let p = &points[i * dim..(i + 1) * dim];
        for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
            *s += *v as f64;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for d in 0..dim {
                centroids[c * dim + d] = (sums[c * dim + d] * inv) as f32;
            }
        }
    }
    // Empty clusters take half of the currently largest cluster: the donor
    // centroid is nudged apart in opposite directions.
    for c in 0..k {
        if counts[c] != 0 {
            continue;
        }
        let big = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
        if counts[big] == 0 {
            break;
        }
        for d in 0..dim {
            let v = centroids[big * dim + d];
            let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
            centroids[c * dim + d] = v * (1.0 + sign * SPLIT_EPS);
            centroids[big * dim + d] = v * (1.0 - sign * SPLIT_EPS);
        }
        counts[c] = counts[big] / 2;
        counts[big] -= counts[c];
    }
}
