use crate::ann::distance::l2_sq;
use crate::ann::{IdMatrix, IvfPqIndex, IvfPqParams, CODEBOOK_SIZE};
use crate::error::Result;
use crate::store::EmbeddingMatrix;

/// Above this many rows the graph is built through an IVFPQ index with
/// exact re-ranking instead of an all-pairs scan.
pub const EXACT_KNN_LIMIT: usize = 20_000;

/// `k` nearest neighbours per row (self excluded), ascending by distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f32>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> (&[u32], &[f32]) {
        let r = i * self.k..(i + 1) * self.k;
        (&self.indices[r.clone()], &self.distances[r])
    }
}

fn exact(data: &[f32], dim: usize, k: usize) -> KnnGraph {
    let n = data.len() / dim;
    let rows: Vec<Vec<(f32, u32)>> = crate::parallel::map_range(n, |i| {
        let q = &data[i * dim..(i + 1) * dim];
        let mut all: Vec<(f32, u32)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (l2_sq(q, &data[j * dim..(j + 1) * dim]), j as u32))
            .collect();
        let cmp = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if all.len() > k {
            all.select_nth_unstable_by(k - 1, cmp);
            all.truncate(k);
        }
        all.sort_unstable_by(cmp);
        all
    });
    collect(rows, k)
}

fn collect(rows: Vec<Vec<(f32, u32)>>, k: usize) -> KnnGraph {
    let mut indices = Vec::with_capacity(rows.len() * k);
    let mut distances = Vec::with_capacity(rows.len() * k);
    for row in rows {
        for (d, j) in row {
            indices.push(j);
            distances.push(d.max(0.0).sqrt());
        }
    }
    KnnGraph { k, indices, distances }
}

fn approximate(matrix: EmbeddingMatrix, k: usize) -> Result<KnnGraph> {
    let (n, dim) = (matrix.count(), matrix.dim());
    let nlist = ((n as f64).sqrt() as usize).clamp(16, 1024);
    let m = (1..=dim.min(32)).rev().find(|m| dim % m == 0 && dim / m >= 4).unwrap_or(1);
    let params = IvfPqParams {
        nlist,
        m,
        nprobe: (nlist / 8).max(8),
        train_iters: 10,
        seed: 0x6b6e6e,
        ..IvfPqParams::default()
    };
    let train_n = n.min((nlist * 64).max(CODEBOOK_SIZE * 16));
    let stride = n / train_n;
    let sample_rows: Vec<usize> = (0..train_n).map(|i| i * stride).collect();
    let mut index = IvfPqIndex::train(params, &matrix.select(&sample_rows))?;
    let ids = IdMatrix::sequential(matrix);
    index.add(ids.ids(), ids.matrix())?;
    let data = ids.matrix().as_slice();
    let rows: Vec<Result<Vec<(f32, u32)>>> = crate::parallel::map_range(n, |i| {
        let q = &data[i * dim..(i + 1) * dim];
        Ok(index
            .search_exact_rerank(q, k + 1, (k + 1) * 4, &ids)?
            .into_iter()
            .filter(|h| h.id as usize != i)
            .take(k)
            .map(|h| (h.score, h.id as u32))
            .collect())
    });
    Ok(collect(rows.into_iter().collect::<Result<_>>()?, k))
}

/// Builds the kNN graph over row-major `data`.
pub fn knn_graph(data: &[f32], dim: usize, k: usize) -> Result<KnnGraph> {
    let n = data.len() / dim;
    if n > EXACT_KNN_LIMIT {
        // The index path needs unit rows; anything else takes the exact scan.
        if let Ok(matrix) = EmbeddingMatrix::new(dim, data.to_vec()) {
            let g = approximate(matrix, k)?;
            if g.indices.len() == n * k {
                return Ok(g);
            }
            tracing::warn!("approximate kNN graph came back short; falling back to exact");
        }
    }
    Ok(exact(data, dim, k))
}
