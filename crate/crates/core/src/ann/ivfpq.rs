use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::distance::{l2_sq, nearest};
use super::kmeans::{kmeans, KMeansParams};
use crate::error::{Error, Result};
use crate::hash::hash_u64s;
use crate::parallel;
use crate::store::EmbeddingMatrix;

/// Codewords per subquantizer (one byte per code).
pub const CODEBOOK_SIZE: usize = 256;
/// Default number of hits returned by a query.
pub const DEFAULT_K: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvfPqParams {
    pub nlist: usize,
    pub m: usize,
    pub bits_per_code: u32,
    pub nprobe: usize,
    pub train_iters: usize,
    pub seed: u64,
}

impl Default for IvfPqParams {
    fn default() -> Self {
        Self {
            nlist: 64,
            m: 8,
            bits_per_code: 8,
            nprobe: 16,
            train_iters: 25,
            seed: 0,
        }
    }
}

impl IvfPqParams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.nlist == 0 {
            return Err(Error::Param("nlist must be at least 1".into()));
        }
        if self.m == 0 || dim % self.m != 0 {
            return Err(Error::Param(format!("dim {dim} is not divisible by m {}", self.m)));
        }
        if self.nprobe == 0 || self.nprobe > self.nlist {
            return Err(Error::Param(format!(
                "nprobe {} must be in 1..={}",
                self.nprobe, self.nlist
            )));
        }
        if self.bits_per_code != 8 {
            return Err(Error::Param("bits_per_code is fixed at 8".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: u64,
    /// Approximate (or, after re-rank, exact) squared L2 distance.
    pub score: f32,
}

/// Max-heap entry keyed by (score, id); used to keep the k smallest.
#[derive(Clone, Copy)]
struct HeapItem(f32, u64);

impl PartialEq for HeapItem {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<HeapItem>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn push(&mut self, score: f32, id: u64) {
        if self.heap.len() < self.k {
            self.heap.push(HeapItem(score, id));
        } else if let Some(top) = self.heap.peek() {
            if HeapItem(score, id) < *top {
                self.heap.pop();
                self.heap.push(HeapItem(score, id));
            }
        }
    }

    fn into_sorted(self) -> Vec<SearchHit> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|HeapItem(score, id)| SearchHit { id, score })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct InvertedList {
    pub(crate) ids: Vec<u64>,
    pub(crate) codes: Vec<u8>,
}

/// Full vectors by id, used for exact re-ranking.
pub trait VectorLookup {
    fn vector(&self, id: u64) -> Option<&[f32]>;
}

/// An embedding matrix whose rows are addressed by record id.
#[derive(Debug, Clone)]
pub struct IdMatrix {
    ids: Vec<u64>,
    matrix: EmbeddingMatrix,
    rows: HashMap<u64, usize>,
}

impl IdMatrix {
    pub fn new(ids: Vec<u64>, matrix: EmbeddingMatrix) -> Result<Self> {
        if ids.len() != matrix.count() {
            return Err(Error::Invalid(format!(
                "{} ids for {} rows",
                ids.len(),
                matrix.count()
            )));
        }
        let mut rows = HashMap::with_capacity(ids.len());
        for (r, id) in ids.iter().enumerate() {
            if rows.insert(*id, r).is_some() {
                return Err(Error::DuplicateId(*id));
            }
        }
        Ok(Self { ids, matrix, rows })
    }

    /// Ids `0..count` in row order.
    pub fn sequential(matrix: EmbeddingMatrix) -> Self {
        let ids = (0..matrix.count() as u64).collect();
        Self::new(ids, matrix).expect("sequential ids are unique")
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.rows.get(&id).copied()
    }
}

impl VectorLookup for IdMatrix {
    fn vector(&self, id: u64) -> Option<&[f32]> {
        self.rows.get(&id).map(|&r| self.matrix.row(r))
    }
}

#[derive(Debug, Clone)]
pub struct IvfPqIndex {
    pub(crate) params: IvfPqParams,
    pub(crate) dim: usize,
    pub(crate) coarse: Vec<f32>,
    /// `m × 256 × dsub`, subquantizer-major.
    pub(crate) codebooks: Vec<f32>,
    pub(crate) lists: Vec<InvertedList>,
    pub(crate) trained: bool,
    pub(crate) present: HashSet<u64>,
}

impl PartialEq for IvfPqIndex {
    fn eq(&self, o: &Self) -> bool {
        self.params == o.params
            && self.dim == o.dim
            && self.trained == o.trained
            && self.lists == o.lists
            && bits(&self.coarse) == bits(&o.coarse)
            && bits(&self.codebooks) == bits(&o.codebooks)
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

impl IvfPqIndex {
    /// An untrained, empty index.
    pub fn new(params: IvfPqParams, dim: usize) -> Result<Self> {
        params.validate(dim)?;
        Ok(Self {
            params,
            dim,
            coarse: vec![0.0; params.nlist * dim],
            codebooks: vec![0.0; CODEBOOK_SIZE * dim],
            lists: vec![InvertedList::default(); params.nlist],
            trained: false,
            present: HashSet::new(),
        })
    }

    /// Trains the coarse quantizer and the residual codebooks on `sample`.
    pub fn train(params: IvfPqParams, sample: &EmbeddingMatrix) -> Result<Self> {
        let dim = sample.dim();
        let mut index = Self::new(params, dim)?;
        let n = sample.count();
        if n < params.nlist || n < CODEBOOK_SIZE {
            return Err(Error::Param(format!(
                "{n} training vectors; need at least max(nlist={}, {CODEBOOK_SIZE})",
                params.nlist
            )));
        }
        let recommended = params.nlist.max(CODEBOOK_SIZE) * 4;
        if n < recommended {
            tracing::warn!(n, recommended, "small IVFPQ training sample");
        }

        let data = sample.as_slice();
        index.coarse = kmeans(
            data,
            dim,
            &KMeansParams::new(params.nlist, params.train_iters, params.seed),
        )?;

        let coarse = &index.coarse;
        let mut residuals = vec![0f32; data.len()];
        parallel::for_each_chunk_mut(&mut residuals, dim, |i, r| {
            let v = &data[i * dim..(i + 1) * dim];
            let (c, _) = nearest(v, coarse, dim);
            for ((o, x), y) in r.iter_mut().zip(v).zip(&coarse[c * dim..(c + 1) * dim]) {
                *o = x - y;
            }
        });

        let m = params.m;
        let dsub = dim / m;
        let mut codebooks = Vec::with_capacity(m * CODEBOOK_SIZE * dsub);
        for j in 0..m {
            let sub: Vec<f32> = residuals
                .chunks_exact(dim)
                .flat_map(|r| r[j * dsub..(j + 1) * dsub].iter().copied())
                .collect();
            let seed = hash_u64s(params.seed, &[j as u64, 1]);
            codebooks.extend(kmeans(
                &sub,
                dsub,
                &KMeansParams::new(CODEBOOK_SIZE, params.train_iters, seed),
            )?);
        }
        index.codebooks = codebooks;
        index.trained = true;
        Ok(index)
    }

    pub fn params(&self) -> &IvfPqParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(|l| l.ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: u64) -> bool {
        self.present.contains(&id)
    }

    pub fn list_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(|l| l.ids.len()).collect()
    }

    pub fn list_ids(&self, list: usize) -> &[u64] {
        &self.lists[list].ids
    }

    pub fn coarse_centroids(&self) -> &[f32] {
        &self.coarse
    }

    pub fn set_nprobe(&mut self, nprobe: usize) -> Result<()> {
        let p = IvfPqParams { nprobe, ..self.params };
        p.validate(self.dim)?;
        self.params = p;
        Ok(())
    }

    fn dsub(&self) -> usize {
        self.dim / self.params.m
    }

    /// Nearest coarse cell and the m-byte code of the residual.
    pub fn encode(&self, v: &[f32]) -> (usize, Vec<u8>) {
        let dim = self.dim;
        let (cell, _) = nearest(v, &self.coarse, dim);
        let c = &self.coarse[cell * dim..(cell + 1) * dim];
        let dsub = self.dsub();
        let mut resid = vec![0f32; dsub];
        let code = (0..self.params.m)
            .map(|j| {
                for d in 0..dsub {
                    resid[d] = v[j * dsub + d] - c[j * dsub + d];
                }
                let book = &self.codebooks[j * CODEBOOK_SIZE * dsub..(j + 1) * CODEBOOK_SIZE * dsub];
                nearest(&resid, book, dsub).0 as u8
            })
            .collect();
        (cell, code)
    }

    /// Reconstruction of an encoded vector (centroid plus decoded residual).
    pub fn decode(&self, cell: usize, code: &[u8]) -> Vec<f32> {
        let dim = self.dim;
        let dsub = self.dsub();
        let mut out = self.coarse[cell * dim..(cell + 1) * dim].to_vec();
        for (j, &k) in code.iter().enumerate() {
            let w = &self.codebooks[(j * CODEBOOK_SIZE + k as usize) * dsub..][..dsub];
            for d in 0..dsub {
                out[j * dsub + d] += w[d];
            }
        }
        out
    }

    /// Encodes and appends vectors. List order follows input order.
    pub fn add(&mut self, ids: &[u64], matrix: &EmbeddingMatrix) -> Result<()> {
        if !self.trained {
            return Err(Error::Invalid("index is not trained".into()));
        }
        if matrix.dim() != self.dim {
            return Err(Error::Invalid(format!(
                "vector dim {} does not match index dim {}",
                matrix.dim(),
                self.dim
            )));
        }
        if ids.len() != matrix.count() {
            return Err(Error::Invalid(format!("{} ids for {} vectors", ids.len(), matrix.count())));
        }
        let mut batch = HashSet::with_capacity(ids.len());
        for id in ids {
            if self.present.contains(id) || !batch.insert(*id) {
                return Err(Error::DuplicateId(*id));
            }
        }
        let encoded = parallel::map_range(ids.len(), |i| self.encode(matrix.row(i)));
        for (id, (cell, code)) in ids.iter().zip(encoded) {
            let list = &mut self.lists[cell];
            list.ids.push(*id);
            list.codes.extend_from_slice(&code);
        }
        self.present.extend(batch);
        Ok(())
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if !self.trained {
            return Err(Error::Invalid("index is not trained".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Invalid(format!(
                "query dim {} does not match index dim {}",
                query.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// The `nprobe` cells closest to `query`, nearest first.
    fn probe_cells(&self, query: &[f32], nprobe: usize) -> Vec<usize> {
        let dim = self.dim;
        let mut cells: Vec<(f32, usize)> = self
            .coarse
            .chunks_exact(dim)
            .enumerate()
            .map(|(i, c)| (l2_sq(query, c), i))
            .collect();
        let cmp = |a: &(f32, usize), b: &(f32, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if nprobe < cells.len() {
            cells.select_nth_unstable_by(nprobe, cmp);
            cells.truncate(nprobe);
        }
        cells.sort_unstable_by(cmp);
        cells.into_iter().map(|(_, i)| i).collect()
    }

    /// Approximate k nearest neighbours using the index's `nprobe`.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.search_nprobe(query, k, self.params.nprobe)
    }

    pub fn search_nprobe(&self, query: &[f32], k: usize, nprobe: usize) -> Result<Vec<SearchHit>> {
        self.check_query(query)?;
        if k == 0 {
            return Err(Error::Param("k must be at least 1".into()));
        }
        let nprobe = nprobe.clamp(1, self.params.nlist);
        let dim = self.dim;
        let m = self.params.m;
        let dsub = self.dsub();
        let mut top = TopK::new(k);
        let mut lut = vec![0f32; m * CODEBOOK_SIZE];
        let mut resid = vec![0f32; dim];
        for cell in self.probe_cells(query, nprobe) {
            let list = &self.lists[cell];
            if list.ids.is_empty() {
                continue;
            }
            let c = &self.coarse[cell * dim..(cell + 1) * dim];
            for ((r, q), x) in resid.iter_mut().zip(query).zip(c) {
                *r = q - x;
            }
            for j in 0..m {
                let rq = &resid[j * dsub..(j + 1) * dsub];
                let book = &self.codebooks[j * CODEBOOK_SIZE * dsub..(j + 1) * CODEBOOK_SIZE * dsub];
                for (slot, w) in lut[j * CODEBOOK_SIZE..(j + 1) * CODEBOOK_SIZE]
                    .iter_mut()
                    .zip(book.chunks_exact(dsub))
                {
                    *slot = l2_sq(rq, w);
                }
            }
            for (id, code) in list.ids.iter().zip(list.codes.chunks_exact(m)) {
                let mut score = 0f32;
                for (j, &k) in code.iter().enumerate() {
                    score += lut[j * CODEBOOK_SIZE + k as usize];
                }
                top.push(score, *id);
            }
        }
        Ok(top.into_sorted())
    }

    /// PQ shortlist of `shortlist` candidates re-scored with exact squared
    /// L2 distances from `vectors`. Candidates missing from `vectors` are
    /// dropped.
    pub fn search_exact_rerank(
        &self,
        query: &[f32],
        k: usize,
        shortlist: usize,
        vectors: &dyn VectorLookup,
    ) -> Result<Vec<SearchHit>> {
        self.search_exact_rerank_nprobe(query, k, shortlist, self.params.nprobe, vectors)
    }

    /// [`search_exact_rerank`](Self::search_exact_rerank) probing `nprobe`
    /// cells. With `nprobe = nlist` and `shortlist` at least the corpus size
    /// the result equals brute force.
    pub fn search_exact_rerank_nprobe(
        &self,
        query: &[f32],
        k: usize,
        shortlist: usize,
        nprobe: usize,
        vectors: &dyn VectorLookup,
    ) -> Result<Vec<SearchHit>> {
        let candidates = self.search_nprobe(query, shortlist.max(k), nprobe)?;
        let mut top = TopK::new(k);
        for hit in candidates {
            if let Some(v) = vectors.vector(hit.id) {
                top.push(l2_sq(query, v), hit.id);
            }
        }
        Ok(top.into_sorted())
    }
}

/// Exact k nearest neighbours by squared L2, ties broken by id.
pub fn brute_force_knn(query: &[f32], data: &IdMatrix, k: usize) -> Vec<SearchHit> {
    let mut top = TopK::new(k);
    for (row, id) in data.matrix.rows().zip(&data.ids) {
        top.push(l2_sq(query, row), *id);
    }
    top.into_sorted()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_matrix(n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        EmbeddingMatrix::from_unnormalized(dim, data).unwrap()
    }

    fn params(nlist: usize, m: usize) -> IvfPqParams {
        IvfPqParams {
            nlist,
            m,
            nprobe: nlist,
            train_iters: 10,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn param_validation() {
        assert!(params(4, 3).validate(16).is_err());
        assert!(IvfPqParams { nprobe: 5, ..params(4, 4) }.validate(16).is_err());
        assert!(IvfPqParams { nprobe: 0, ..params(4, 4) }.validate(16).is_err());
        assert!(params(0, 4).validate(16).is_err());
        assert!(params(4, 4).validate(16).is_ok());
    }

    #[test]
    fn too_few_training_vectors() {
        let m = random_matrix(100, 16, 1);
        assert!(IvfPqIndex::train(params(4, 4), &m).is_err());
    }

    #[test]
    fn single_cell_identical_vectors() {
        let dim = 8;
        let v = [0.5f32; 8];
        let m = EmbeddingMatrix::from_unnormalized(dim, v.repeat(300)).unwrap();
        let index = IvfPqIndex::train(params(1, dim), &m).unwrap();
        assert_eq!(index.coarse_centroids(), m.row(0));
    }

    #[test]
    fn singleton_and_saturation() {
        let m = random_matrix(400, 16, 2);
        let mut index = IvfPqIndex::train(params(4, 4), &m).unwrap();
        index.add(&[42], &m.head(1)).unwrap();
        let hits = index.search(m.row(0), 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, 42);

        let ids: Vec<u64> = (100..150).collect();
        index.add(&ids, &m.select(&(1..51).collect::<Vec<_>>())).unwrap();
        let hits = index.search(m.row(3), 1000).unwrap();
        assert_eq!(hits.len(), 51);
        assert!(hits.windows(2).all(|w| w[0].score <= w[1].score));
    }

    #[test]
    fn add_errors() {
        let m = random_matrix(300, 16, 3);
        let mut untrained = IvfPqIndex::new(params(4, 4), 16).unwrap();
        assert!(untrained.add(&[1], &m.head(1)).is_err());
        let mut index = IvfPqIndex::train(params(4, 4), &m).unwrap();
        index.add(&[1], &m.head(1)).unwrap();
        assert!(matches!(index.add(&[1], &m.head(1)), Err(Error::DuplicateId(1))));
        assert!(matches!(index.add(&[2, 2], &m.head(2)), Err(Error::DuplicateId(2))));
        assert!(index.search(&[0.0; 8], 1).is_err());
    }

    #[test]
    fn partition_invariant() {
        let m = random_matrix(1000, 16, 4);
        let mut index = IvfPqIndex::train(params(8, 4), &m).unwrap();
        let ids: Vec<u64> = (0..1000).collect();
        index.add(&ids, &m).unwrap();
        assert_eq!(index.list_sizes().iter().sum::<usize>(), 1000);
        let mut seen = HashSet::new();
        for l in 0..8 {
            for id in index.list_ids(l) {
                assert!(seen.insert(*id));
                assert_eq!(nearest(m.row(*id as usize), index.coarse_centroids(), 16).0, l);
            }
        }
    }

    #[test]
    fn rerank_with_full_probe_is_exact() {
        let m = random_matrix(1000, 32, 5);
        let mut index = IvfPqIndex::train(params(8, 8), &m).unwrap();
        let store = IdMatrix::sequential(m.clone());
        index.add(store.ids(), &m).unwrap();
        let queries = random_matrix(20, 32, 6);
        for q in queries.rows() {
            let got: Vec<u64> = index
                .search_exact_rerank(q, 10, 1000, &store)
                .unwrap()
                .iter()
                .map(|h| h.id)
                .collect();
            let want: Vec<u64> = brute_force_knn(q, &store, 10).iter().map(|h| h.id).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn deterministic_training() {
        let m = random_matrix(600, 16, 8);
        let a = IvfPqIndex::train(params(4, 4), &m).unwrap();
        let b = IvfPqIndex::train(params(4, 4), &m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_clouds_match_lloyd_oracle() {
        // Brute-force Lloyd's on the same 200 points, started from one point
        // of each cloud; the trained centroids must sit near the cloud means.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dim = 8;
        let mut pts = Vec::new();
        for i in 0..200 {
            let center = if i < 100 { 1.0 } else { -1.0 };
            for d in 0..dim {
                let base = if d == 0 { center } else { 0.0 };
                pts.push(base + rng.gen_range(-0.05..0.05));
            }
        }
        let mut c = [pts[..dim].to_vec(), pts[100 * dim..101 * dim].to_vec()];
        for _ in 0..20 {
            let mut sums = [vec![0f64; dim], vec![0f64; dim]];
            let mut counts = [0usize; 2];
            for p in pts.chunks(dim) {
                let d0: f32 = p.iter().zip(&c[0]).map(|(a, b)| (a - b) * (a - b)).sum();
                let d1: f32 = p.iter().zip(&c[1]).map(|(a, b)| (a - b) * (a - b)).sum();
                let j = usize::from(d1 < d0);
                counts[j] += 1;
                for d in 0..dim {
                    sums[j][d] += p[d] as f64;
                }
            }
            for j in 0..2 {
                c[j] = sums[j].iter().map(|s| (s / counts[j] as f64) as f32).collect();
            }
        }
        let got = kmeans(&pts, dim, &KMeansParams::new(2, 25, 3)).unwrap();
        let radius = 0.05 * (dim as f32).sqrt();
        for oracle in &c {
            let closest = got
                .chunks(dim)
                .map(|g| l2_sq(g, oracle).sqrt())
                .fold(f32::INFINITY, f32::min);
            assert!(closest < radius, "centroid off by {closest}");
        }
    }
}
