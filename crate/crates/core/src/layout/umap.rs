use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::knn::{knn_graph, KnnGraph};
use crate::error::{Error, Result};
use crate::store::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    pub n_neighbors: usize,
    pub min_dist: f32,
    pub spread: f32,
    pub epochs: usize,
    pub negative_samples: usize,
    /// Initial learning rate; decays linearly to zero over the epochs.
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            epochs: 200,
            negative_samples: 5,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors < 2 {
            return Err(Error::Param("n_neighbors must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be at least 1".into()));
        }
        if !(self.min_dist >= 0.0 && self.spread > 0.0 && self.min_dist <= self.spread) {
            return Err(Error::Param("need 0 <= min_dist <= spread and spread > 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Param("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Least-squares fit of `1 / (1 + a d^(2b))` to the target membership curve
/// (1 below `min_dist`, exponential decay with scale `spread` above it).
pub fn fit_ab(min_dist: f32, spread: f32) -> (f32, f32) {
    let (min_dist, spread) = (min_dist as f64, spread as f64);
    let xs: Vec<f64> = (1..=300).map(|i| i as f64 * spread * 3.0 / 300.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    // Coarse grid in (log a, b), then shrinking pattern search.
    let mut best = (1.0f64, 1.0f64, f64::INFINITY);
    for i in 0..=60 {
        let la = -3.0 + 6.0 * i as f64 / 60.0;
        for j in 0..=60 {
            let b = 0.2 + 2.8 * j as f64 / 60.0;
            let e = sse(la.exp(), b);
            if e < best.2 {
                best = (la, b, e);
            }
        }
    }
    let (mut la, mut b, mut e) = best;
    let (mut sa, mut sb) = (0.1, 0.05);
    while sa > 1e-7 {
        let mut moved = false;
        for (dla, db) in [(sa, 0.0), (-sa, 0.0), (0.0, sb), (0.0, -sb)] {
            let (nla, nb) = (la + dla, b + db);
            if nb <= 0.0 {
                continue;
            }
            let ne = sse(nla.exp(), nb);
            if ne < e {
                (la, b, e, moved) = (nla, nb, ne, true);
            }
        }
        if !moved {
            sa /= 2.0;
            sb /= 2.0;
        }
    }
    (la.exp() as f32, b as f32)
}

/// Per-point fuzzy memberships: `exp(-(d - rho) / sigma)` with `sigma`
/// chosen so each row sums to log2(k).
fn memberships(graph: &KnnGraph) -> Vec<f32> {
    let k = graph.k;
    let target = (k as f64).log2();
    let rows: Vec<Vec<f32>> = crate::parallel::map_range(graph.len(), |i| {
        let (_, dists) = graph.neighbors(i);
        let rho = dists.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0) as f64;
        let total = |sigma: f64| -> f64 {
            dists
                .iter()
                .map(|&d| (-((d as f64 - rho).max(0.0)) / sigma).exp())
                .sum()
        };
        let (mut lo, mut hi, mut sigma) = (0.0f64, f64::INFINITY, 1.0f64);
        for _ in 0..64 {
            let s = total(sigma);
            if (s - target).abs() < 1e-5 {
                break;
            }
            if s > target {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = if hi.is_infinite() { sigma * 2.0 } else { (lo + hi) / 2.0 };
            }
        }
        let mean: f64 = dists.iter().map(|&d| d as f64).sum::<f64>() / k as f64;
        sigma = sigma.max(1e-3 * mean).max(1e-12);
        dists
            .iter()
            .map(|&d| (-((d as f64 - rho).max(0.0)) / sigma).exp() as f32)
            .collect()
    });
    rows.into_iter().flatten().collect()
}

/// Symmetric edge list `(i, j, w)` with `i < j` from the fuzzy union
/// `w = w1 + w2 - w1 w2`, sorted by `(i, j)`.
fn fuzzy_union(graph: &KnnGraph, weights: &[f32]) -> Vec<(u32, u32, f32)> {
    let mut directed: Vec<(u32, u32, f32)> = Vec::with_capacity(weights.len());
    for i in 0..graph.len() {
        let (idx, _) = graph.neighbors(i);
        for (j, &t) in idx.iter().enumerate() {
            let w = weights[i * graph.k + j];
            if w > 0.0 && t as usize != i {
                let (a, b) = if (i as u32) < t { (i as u32, t) } else { (t, i as u32) };
                directed.push((a, b, w));
            }
        }
    }
    directed.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let mut edges: Vec<(u32, u32, f32)> = Vec::with_capacity(directed.len());
    for (a, b, w) in directed {
        match edges.last_mut() {
            Some(last) if last.0 == a && last.1 == b => last.2 = last.2 + w - last.2 * w,
            _ => edges.push((a, b, w)),
        }
    }
    edges
}

/// First two principal components by power iteration, scaled to ±10.
fn pca_init(data: &[f32], dim: usize, seed: u64) -> Vec<f32> {
    let n = data.len() / dim;
    let mut mean = vec![0.0f64; dim];
    for row in data.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = |i: usize, d: usize| data[i * dim + d] as f64 - mean[d];

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9ca);
    let mut components: Vec<Vec<f64>> = Vec::new();
    for _ in 0..2 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..100 {
            // w = Xᵀ X v, deflated against earlier components.
            let proj: Vec<f64> = (0..n)
                .map(|i| (0..dim).map(|d| centered(i, d) * v[d]).sum())
                .collect();
            let mut w = vec![0.0f64; dim];
            for (i, p) in proj.iter().enumerate() {
                for (d, wd) in w.iter_mut().enumerate() {
                    *wd += centered(i, d) * p;
                }
            }
            for c in &components {
                let dotc: f64 = w.iter().zip(c).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(c).for_each(|(a, b)| *a -= dotc * b);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                break;
            }
            w.iter_mut().for_each(|x| *x /= norm);
            v = w;
        }
        components.push(v);
    }
    let mut out = vec![0.0f32; n * 2];
    for i in 0..n {
        for (c, comp) in components.iter().enumerate() {
            out[i * 2 + c] = (0..dim).map(|d| centered(i, d) * comp[d]).sum::<f64>() as f32;
        }
    }
    let max = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = if max > 0.0 { 10.0 / max } else { 1.0 };
    // Small jitter keeps duplicate rows from starting on the same spot.
    for v in out.iter_mut() {
        *v = *v * scale + rng.gen_range(-1e-4..1e-4);
    }
    out
}

fn clip(v: f32) -> f32 {
    v.clamp(-4.0, 4.0)
}

/// Sequential SGD over the fuzzy graph. Every update depends on the one
/// before it, so a fixed seed gives bit-identical output.
fn optimize(
    pos: &mut [f32],
    edges: &[(u32, u32, f32)],
    n: usize,
    params: &LayoutParams,
    a: f32,
    b: f32,
) {
    let epochs = params.epochs;
    let max_w = edges.iter().fold(0.0f32, |m, e| m.max(e.2));
    if max_w <= 0.0 {
        return;
    }
    // Edges whose weight would be sampled less than once over the run are
    // dropped.
    let live: Vec<(usize, usize, f64)> = edges
        .iter()
        .filter(|e| e.2 * epochs as f32 >= max_w)
        .map(|e| (e.0 as usize, e.1 as usize, (max_w / e.2) as f64))
        .collect();
    let neg_rate = params.negative_samples as f64;
    let mut next_sample: Vec<f64> = live.iter().map(|e| e.2).collect();
    let mut next_negative: Vec<f64> = live.iter().map(|e| e.2 / neg_rate.max(1.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    for epoch in 0..epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f32 / epochs as f32);
        let e = epoch as f64 + 1.0;
        for (k, &(i, j, period)) in live.iter().enumerate() {
            if next_sample[k] > e {
                continue;
            }
            let d2 = {
                let dx = pos[i * 2] - pos[j * 2];
                let dy = pos[i * 2 + 1] - pos[j * 2 + 1];
                dx * dx + dy * dy
            };
            if d2 > 0.0 {
                let coef = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                for c in 0..2 {
                    let g = clip(coef * (pos[i * 2 + c] - pos[j * 2 + c])) * alpha;
                    pos[i * 2 + c] += g;
                    pos[j * 2 + c] -= g;
                }
            }
            next_sample[k] += period;

            if params.negative_samples > 0 {
                let per_neg = period / neg_rate;
                let draws = ((e - next_negative[k]) / per_neg).floor().max(0.0) as usize;
                for _ in 0..draws {
                    let t = rng.gen_range(0..n);
                    if t == i {
                        continue;
                    }
                    let dx = pos[i * 2] - pos[t * 2];
                    let dy = pos[i * 2 + 1] - pos[t * 2 + 1];
                    let d2 = dx * dx + dy * dy;
                    let coef = if d2 > 0.0 {
                        2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)))
                    } else {
                        0.0
                    };
                    if coef > 0.0 {
                        pos[i * 2] += clip(coef * dx) * alpha;
                        pos[i * 2 + 1] += clip(coef * dy) * alpha;
                    } else {
                        pos[i * 2] += 4.0 * alpha;
                        pos[i * 2 + 1] += 4.0 * alpha;
                    }
                }
                next_negative[k] += draws as f64 * per_neg;
            }
        }
    }
}

/// Lays out row-major `data` (any scale) in 2D.
pub fn layout_rows(data: &[f32], dim: usize, params: &LayoutParams) -> Result<Vec<[f32; 2]>> {
    params.validate()?;
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Invalid(format!("data length {} is not a multiple of dim {dim}", data.len())));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite value in row {}", i / dim)));
    }
    let n = data.len() / dim;
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![[0.0, 0.0]]),
        _ if n < params.n_neighbors + 1 => {
            return Err(Error::Invalid(format!(
                "layout needs at least n_neighbors + 1 = {} points, got {n}",
                params.n_neighbors + 1
            )))
        }
        _ => {}
    }
    let graph = knn_graph(data, dim, params.n_neighbors)?;
    let weights = memberships(&graph);
    let edges = fuzzy_union(&graph, &weights);
    let (a, b) = fit_ab(params.min_dist, params.spread);
    let mut pos = pca_init(data, dim, params.seed);
    optimize(&mut pos, &edges, n, params, a, b);
    Ok(pos.chunks_exact(2).map(|p| [p[0], p[1]]).collect())
}

pub fn layout(matrix: &EmbeddingMatrix, params: &LayoutParams) -> Result<Vec<[f32; 2]>> {
    layout_rows(matrix.as_slice(), matrix.dim(), params)
}
