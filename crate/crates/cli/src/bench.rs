//! `bench` reports: IVFPQ recall against exact search, the unique-subject
//! diversity curve, and prompt length statistics.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use atlas_core::ann::{brute_force_knn, IdMatrix, IvfPqIndex, IvfPqParams};
use atlas_core::artifacts::ArtifactDir;
use atlas_core::dedup::{diversity_curve, DedupParams, DiversityCurve};
use atlas_core::embed::EmbedderSpec;
use atlas_core::stats::{length_stats, LengthStats};
use atlas_core::store::{matrix_normalize, EmbeddingMatrix};
use atlas_core::Error;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecallBench {
    pub vectors: usize,
    pub dim: usize,
    pub queries: usize,
    pub k: usize,
    pub nlist: usize,
    pub m: usize,
    pub train_iters: usize,
    pub nprobes: Vec<usize>,
    /// Exact re-rank shortlist length; 0 ranks by PQ distance alone.
    pub rerank: usize,
    pub seed: u64,
}

impl Default for RecallBench {
    fn default() -> Self {
        Self {
            vectors: 10_000,
            dim: 128,
            queries: 100,
            k: 10,
            nlist: 64,
            m: 8,
            train_iters: 25,
            nprobes: vec![1, 4, 16, 64],
            rerank: 0,
            seed: 0,
        }
    }
}

impl RecallBench {
    pub fn validate(&self) -> CliResult<()> {
        if self.vectors == 0 || self.queries == 0 || self.k == 0 || self.dim == 0 {
            return Err(Error::Param("vectors, queries, k and dim must be at least 1".into()).into());
        }
        if self.nprobes.is_empty() {
            return Err(Error::Param("nprobes must list at least one value".into()).into());
        }
        for &p in &self.nprobes {
            self.params(p).validate(self.dim)?;
        }
        Ok(())
    }

    fn params(&self, nprobe: usize) -> IvfPqParams {
        IvfPqParams {
            nlist: self.nlist,
            m: self.m,
            nprobe,
            train_iters: self.train_iters,
            seed: self.seed,
            ..IvfPqParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub nprobe: usize,
    pub recall: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub bench: RecallBench,
    pub build_ms: u64,
    pub points: Vec<RecallPoint>,
}

impl RecallReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("nprobe,recall,p50_ms,p95_ms\n");
        for p in &self.points {
            s.push_str(&format!("{},{:.6},{:.4},{:.4}\n", p.nprobe, p.recall, p.p50_ms, p.p95_ms));
        }
        s
    }
}

/// `n` uniform directions in `dim` dimensions.
pub fn random_unit_matrix(n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    while data.len() < n * dim {
        let mut row: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        if matrix_normalize(&mut row) {
            data.extend_from_slice(&row);
        }
    }
    EmbeddingMatrix::new(dim, data).expect("rows are unit length")
}

/// Nearest-rank percentile of unsorted `xs`.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Builds one index on random unit vectors and measures recall@k against
/// brute-force search at each `nprobe`.
pub fn run_recall(bench: &RecallBench) -> CliResult<RecallReport> {
    bench.validate()?;
    let data = random_unit_matrix(bench.vectors, bench.dim, bench.seed);
    let queries = random_unit_matrix(bench.queries, bench.dim, bench.seed ^ 0x9e37_79b9_7f4a_7c15);
    let vectors = IdMatrix::sequential(data);

    let started = Instant::now();
    let mut index = IvfPqIndex::train(bench.params(bench.nprobes[0]), vectors.matrix())?;
    index.add(vectors.ids(), vectors.matrix())?;
    let build_ms = started.elapsed().as_millis() as u64;

    let truth: Vec<HashSet<u64>> = atlas_core::parallel::map_range(bench.queries, |q| {
        brute_force_knn(queries.row(q), &vectors, bench.k)
            .into_iter()
            .map(|h| h.id)
            .collect()
    });

    let mut points = Vec::with_capacity(bench.nprobes.len());
    for &nprobe in &bench.nprobes {
        index.set_nprobe(nprobe)?;
        let mut found = 0usize;
        let mut times = Vec::with_capacity(bench.queries);
        for (q, truth) in truth.iter().enumerate() {
            let t = Instant::now();
            let hits = if bench.rerank > 0 {
                index.search_exact_rerank(queries.row(q), bench.k, bench.rerank, &vectors)?
            } else {
                index.search(queries.row(q), bench.k)?
            };
            times.push(t.elapsed().as_secs_f64() * 1e3);
            found += hits.iter().filter(|h| truth.contains(&h.id)).count();
        }
        let point = RecallPoint {
            nprobe,
            recall: found as f64 / (bench.queries * bench.k) as f64,
            p50_ms: percentile(&times, 0.5),
            p95_ms: percentile(&times, 0.95),
        };
        tracing::info!(nprobe, recall = point.recall, p95_ms = point.p95_ms, "recall point");
        points.push(point);
    }
    Ok(RecallReport {
        bench: bench.clone(),
        build_ms,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversityBench {
    /// Number of evenly spaced checkpoints when `checkpoints` is empty.
    pub points: usize,
    pub checkpoints: Vec<usize>,
    /// Falls back to the generator's dedup settings.
    pub dedup: Option<DedupParams>,
}

impl Default for DiversityBench {
    fn default() -> Self {
        Self {
            points: 10,
            checkpoints: Vec::new(),
            dedup: None,
        }
    }
}

impl DiversityBench {
    pub fn checkpoints_for(&self, n: usize) -> Vec<usize> {
        if !self.checkpoints.is_empty() {
            return self.checkpoints.clone();
        }
        let points = self.points.clamp(1, n.max(1));
        let mut cps: Vec<usize> = (1..=points).map(|i| (i * n).div_ceil(points)).collect();
        cps.dedup();
        cps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub texts: usize,
    pub dedup: DedupParams,
    pub curve: DiversityCurve,
}

pub fn run_diversity<S: AsRef<str> + Sync>(
    texts: &[S],
    bench: &DiversityBench,
    spec: &EmbedderSpec,
    dedup: &DedupParams,
) -> CliResult<DiversityReport> {
    dedup.validate()?;
    let checkpoints = bench.checkpoints_for(texts.len());
    let curve = diversity_curve(texts, &checkpoints, spec, dedup)?;
    Ok(DiversityReport {
        texts: texts.len(),
        dedup: *dedup,
        curve,
    })
}

pub fn run_length<S: AsRef<str>>(prompts: &[S]) -> CliResult<LengthStats> {
    Ok(length_stats(prompts)?)
}

/// Non-empty lines of a text file.
pub fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Subject captions of the searchable records in an artifact directory.
pub fn corpus_subjects(dir: &ArtifactDir) -> CliResult<Vec<String>> {
    Ok(dir
        .searchable_records()?
        .into_iter()
        .map(|r| r.lineage.subject_caption)
        .collect())
}

pub fn corpus_prompts(dir: &ArtifactDir) -> CliResult<Vec<String>> {
    Ok(dir.searchable_records()?.into_iter().map(|r| r.prompt).collect())
}
