//! Reference computations for the test suites. Everything here is a plain
//! scalar loop in f64 so it shares no code path with the crates under test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` i.i.d. standard-normal rows, each scaled to unit length.
pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let row: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.extend(row.iter().map(|v| (v / norm) as f32));
    }
    out
}

/// `k` isotropic unit-variance clusters of `per` points whose centres are
/// pairwise `separation` apart (scaled basis vectors). Returns rows and
/// labels.
pub fn gaussian_clusters(k: usize, per: usize, dim: usize, separation: f64, seed: u64) -> (Vec<f32>, Vec<usize>) {
    assert!(k <= dim);
    let mut r = rng(seed);
    let offset = separation / 2f64.sqrt();
    let mut data = Vec::with_capacity(k * per * dim);
    let mut labels = Vec::with_capacity(k * per);
    for c in 0..k {
        for _ in 0..per {
            for d in 0..dim {
                let centre = if d == c { offset } else { 0.0 };
                data.push((centre + r.sample::<f64, _>(StandardNormal)) as f32);
            }
            labels.push(c);
        }
    }
    (data, labels)
}

pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ab += a[i] as f64 * b[i] as f64;
        aa += a[i] as f64 * a[i] as f64;
        bb += b[i] as f64 * b[i] as f64;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Exact k nearest rows to `q` by squared L2, ties broken by row index.
pub fn exact_knn(data: &[f32], dim: usize, q: &[f32], k: usize) -> Vec<usize> {
    let n = data.len() / dim;
    let mut all: Vec<(f64, usize)> = (0..n).map(|i| (sq_dist(q, &data[i * dim..(i + 1) * dim]), i)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|x| x.1).collect()
}

/// |truth ∩ got| / |truth|.
pub fn recall(truth: &[usize], got: &[usize]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = truth.iter().filter(|t| got.contains(t)).count();
    hits as f64 / truth.len() as f64
}

/// O(n²) greedy near-duplicate removal: a row survives when its cosine with
/// every earlier survivor is at most `threshold`.
pub fn greedy_dedup(data: &[f32], dim: usize, threshold: f64) -> Vec<usize> {
    let n = data.len() / dim;
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..n {
        let row = &data[i * dim..(i + 1) * dim];
        let dup = kept.iter().any(|&j| cosine(row, &data[j * dim..(j + 1) * dim]) > threshold);
        if !dup {
            kept.push(i);
        }
    }
    kept
}

/// Mean silhouette of 2D points under `labels`, Euclidean distance.
pub fn silhouette(points: &[[f32; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let d = |i: usize, j: usize| {
        let dx = points[i][0] as f64 - points[j][0] as f64;
        let dy = points[i][1] as f64 - points[j][1] as f64;
        (dx * dx + dy * dy).sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += d(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = (b - a) / a.max(b);
        total += s;
    }
    total / n as f64
}

fn neighbour_ranks(dist: impl Fn(usize, usize) -> f64, n: usize, i: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| dist(i, a).partial_cmp(&dist(i, b)).unwrap().then(a.cmp(&b)));
    order
}

/// Trustworthiness of a 2D embedding of `high` (row-major, `dim` columns)
/// with neighbourhood size `k`.
pub fn trustworthiness(high: &[f32], dim: usize, low: &[[f32; 2]], k: usize) -> f64 {
    let n = low.len();
    let hd = |i: usize, j: usize| sq_dist(&high[i * dim..(i + 1) * dim], &high[j * dim..(j + 1) * dim]);
    let ld = |i: usize, j: usize| {
        let dx = low[i][0] as f64 - low[j][0] as f64;
        let dy = low[i][1] as f64 - low[j][1] as f64;
        dx * dx + dy * dy
    };
    let mut penalty = 0.0;
    for i in 0..n {
        let high_order = neighbour_ranks(hd, n, i);
        let mut rank = vec![0usize; n];
        for (r, &j) in high_order.iter().enumerate() {
            rank[j] = r + 1;
        }
        let low_order = neighbour_ranks(ld, n, i);
        for &j in low_order.iter().take(k) {
            if rank[j] > k {
                penalty += (rank[j] - k) as f64;
            }
        }
    }
    let nf = n as f64;
    let kf = k as f64;
    1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty
}

/// Token count by a character scan: a token starts at every non-whitespace
/// character that follows whitespace or the start of the text.
pub fn scan_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_token = false;
    for c in text.chars() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            count += 1;
        }
    }
    count
}

/// Token count mean and population standard deviation.
pub fn length_moments(texts: &[String]) -> (f64, f64) {
    let lens: Vec<f64> = texts.iter().map(|t| scan_tokens(t) as f64).collect();
    let n = lens.len() as f64;
    let mean = lens.iter().sum::<f64>() / n;
    let var = lens.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `h[t]` = number of texts with exactly `t` tokens, up to the longest.
pub fn length_histogram(texts: &[String]) -> Vec<usize> {
    let mut h: Vec<usize> = Vec::new();
    for t in texts {
        let l = scan_tokens(t);
        if h.len() <= l {
            h.resize(l + 1, 0);
        }
        h[l] += 1;
    }
    h
}

/// Scalar-loop 2D histogram: half-open bins over the tight bounds, the
/// maximum coordinate folded into the last bin, zero extent treated as 1.
pub fn histogram(points: &[[f32; 2]], res: usize) -> Vec<u32> {
    let mut h = vec![0u32; res * res];
    if points.is_empty() {
        return h;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in points {
        x0 = x0.min(p[0] as f64);
        y0 = y0.min(p[1] as f64);
        x1 = x1.max(p[0] as f64);
        y1 = y1.max(p[1] as f64);
    }
    let w = if x1 > x0 { x1 - x0 } else { 1.0 };
    let hh = if y1 > y0 { y1 - y0 } else { 1.0 };
    for p in points {
        let mut bx = ((p[0] as f64 - x0) / w * res as f64) as usize;
        let mut by = ((p[1] as f64 - y0) / hh * res as f64) as usize;
        if bx >= res {
            bx = res - 1;
        }
        if by >= res {
            by = res - 1;
        }
        h[by * res + bx] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silhouette_of_two_far_points_pairs() {
        let p = [[0.0, 0.0], [0.0, 1.0], [100.0, 0.0], [100.0, 1.0]];
        let s = silhouette(&p, &[0, 0, 1, 1]);
        assert!(s > 0.98);
    }

    #[test]
    fn trustworthiness_of_identity_is_one() {
        let high: Vec<f32> = (0..40).map(|i| (i * i % 17) as f32).collect();
        let low: Vec<[f32; 2]> = high.chunks(2).map(|c| [c[0], c[1]]).collect();
        assert!((trustworthiness(&high, 2, &low, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_dedup_pair() {
        let d = [1.0, 0.0, 0.99, 0.1, 0.0, 1.0];
        assert_eq!(greedy_dedup(&d, 2, 0.7), vec![0, 2]);
    }
}
