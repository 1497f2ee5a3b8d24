//! Embedding-space near-duplicate removal.
//!
//! Rows are swept in ascending order; a row survives iff no earlier survivor
//! has cosine similarity above the threshold with it. Candidate neighbours
//! are found either by an exact scan or through an IVFPQ index probed over
//! every cell.

use serde::{Deserialize, Serialize};

use crate::ann::distance::dot;
use crate::ann::{IdMatrix, IvfPqIndex, IvfPqParams, CODEBOOK_SIZE};
use crate::embed::{embed_batch, EmbedderSpec};
use crate::error::{Error, Result};
use crate::parallel;
use crate::store::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupParams {
    pub neighbors: usize,
    pub cos_threshold: f32,
    pub exact: bool,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            neighbors: 200,
            cos_threshold: 0.7,
            exact: false,
        }
    }
}

impl DedupParams {
    pub fn exact(cos_threshold: f32) -> Self {
        Self {
            cos_threshold,
            exact: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::Param("dedup neighbors must be at least 1".into()));
        }
        if !(self.cos_threshold > 0.0 && self.cos_threshold <= 1.0) {
            return Err(Error::Param(format!(
                "cos_threshold must be in (0, 1], got {}",
                self.cos_threshold
            )));
        }
        Ok(())
    }
}

/// Surviving row indices, ascending.
pub fn dedup(matrix: &EmbeddingMatrix, params: &DedupParams) -> Result<Vec<usize>> {
    params.validate()?;
    matrix
        .check_normalized()
        .map_err(|e| Error::Invalid(format!("dedup needs normalized rows: {e}")))?;
    let n = matrix.count();
    let candidates = if params.exact || n < approx_min_rows() {
        exact_candidates(matrix, params.cos_threshold)
    } else {
        approx_candidates(matrix, params)?
    };
    Ok(sweep(&candidates))
}

/// Smallest corpus for which the approximate path trains an index; below it
/// the exact scan is both cheaper and required by PQ training.
fn approx_min_rows() -> usize {
    CODEBOOK_SIZE * 4
}

/// Earlier rows whose cosine with each row exceeds the threshold.
fn exact_candidates(matrix: &EmbeddingMatrix, threshold: f32) -> Vec<Vec<usize>> {
    parallel::map_range(matrix.count(), |i| {
        let v = matrix.row(i);
        (0..i).filter(|&j| dot(v, matrix.row(j)) > threshold).collect()
    })
}

fn approx_params(n: usize, dim: usize) -> IvfPqParams {
    let nlist = ((n as f64).sqrt() as usize / 2).clamp(1, 256);
    let m = (1..=dim)
        .rev()
        .find(|m| dim % m == 0 && dim / m >= 8)
        .unwrap_or(1);
    IvfPqParams {
        nlist,
        m,
        nprobe: nlist,
        train_iters: 10,
        seed: 0x5eed,
        ..IvfPqParams::default()
    }
}

fn approx_candidates(matrix: &EmbeddingMatrix, params: &DedupParams) -> Result<Vec<Vec<usize>>> {
    let n = matrix.count();
    let mut index = IvfPqIndex::train(approx_params(n, matrix.dim()), matrix)?;
    let store = IdMatrix::sequential(matrix.clone());
    index.add(store.ids(), matrix)?;
    let shortlist = params.neighbors * 2;
    let results = parallel::map_range(n, |i| {
        let v = matrix.row(i);
        index
            .search_exact_rerank(v, params.neighbors, shortlist, &store)
            .map(|hits| {
                let mut c: Vec<usize> = hits
                    .into_iter()
                    .map(|h| h.id as usize)
                    .filter(|&j| j < i && dot(v, matrix.row(j)) > params.cos_threshold)
                    .collect();
                c.sort_unstable();
                c
            })
    });
    results.into_iter().collect()
}

fn sweep(candidates: &[Vec<usize>]) -> Vec<usize> {
    let mut alive = vec![false; candidates.len()];
    let mut out = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if !c.iter().any(|&j| alive[j]) {
            alive[i] = true;
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityCurve {
    pub sample_counts: Vec<usize>,
    pub unique_counts: Vec<usize>,
}

impl DiversityCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_count,unique_count\n");
        for (a, b) in self.sample_counts.iter().zip(&self.unique_counts) {
            s.push_str(&format!("{a},{b}\n"));
        }
        s
    }
}

/// Unique-sample count after dedup of each prefix `texts[..c]`.
pub fn diversity_curve<S: AsRef<str> + Sync>(
    texts: &[S],
    checkpoints: &[usize],
    spec: &EmbedderSpec,
    params: &DedupParams,
) -> Result<DiversityCurve> {
    if texts.is_empty() {
        return Err(Error::Invalid("diversity curve needs at least one text".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Param("checkpoints must be strictly ascending".into()));
    }
    if let Some(c) = checkpoints.iter().find(|c| **c > texts.len()) {
        return Err(Error::Param(format!("checkpoint {c} exceeds {} texts", texts.len())));
    }
    let last = checkpoints.last().copied().unwrap_or(0);
    let matrix = embed_batch(spec, &texts[..last.max(1)])?;

    let unique_counts = if params.exact {
        // The exact sweep is prefix-stable: survivors of texts[..c] are the
        // survivors of the whole run that fall below c.
        let survivors = dedup(&matrix, params)?;
        checkpoints
            .iter()
            .map(|&c| survivors.partition_point(|&s| s < c))
            .collect()
    } else {
        checkpoints
            .iter()
            .map(|&c| Ok(if c == 0 { 0 } else { dedup(&matrix.head(c), params)?.len() }))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(DiversityCurve {
        sample_counts: checkpoints.to_vec(),
        unique_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn greedy_oracle(m: &EmbeddingMatrix, t: f32) -> Vec<usize> {
        let mut kept: Vec<usize> = Vec::new();
        for i in 0..m.count() {
            let dup = kept.iter().any(|&j| {
                let c: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| *a as f64 * *b as f64).sum();
                c > t as f64
            });
            if !dup {
                kept.push(i);
            }
        }
        kept
    }

    /// Clustered rows: `n` points around `centers` random centers.
    fn clustered(n: usize, dim: usize, centers: usize, noise: f32, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs: Vec<Vec<f32>> = (0..centers)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let c = &cs[rng.gen_range(0..centers)];
            data.extend(c.iter().map(|v| v + rng.gen_range(-noise..noise)));
        }
        EmbeddingMatrix::from_unnormalized(dim, data).unwrap()
    }

    #[test]
    fn identical_pair_keeps_first() {
        let m = EmbeddingMatrix::new(2, vec![0.6, 0.8, 0.6, 0.8]).unwrap();
        assert_eq!(dedup(&m, &DedupParams::exact(0.7)).unwrap(), vec![0]);
        assert_eq!(dedup(&m, &DedupParams::default()).unwrap(), vec![0]);
    }

    #[test]
    fn orthogonal_rows_all_survive() {
        let m = EmbeddingMatrix::new(3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(dedup(&m, &DedupParams::exact(0.7)).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn matches_greedy_oracle_on_random_rows() {
        let m = clustered(500, 16, 40, 0.4, 1);
        let got = dedup(&m, &DedupParams::exact(0.7)).unwrap();
        assert_eq!(got, greedy_oracle(&m, 0.7));
        assert!(got.len() < 500 && got.len() > 1);
    }

    #[test]
    fn rejects_bad_params_and_unnormalized() {
        let m = EmbeddingMatrix::new(2, vec![1.0, 0.0]).unwrap();
        assert!(dedup(&m, &DedupParams { cos_threshold: 0.0, ..DedupParams::default() }).is_err());
        assert!(dedup(&m, &DedupParams { cos_threshold: 1.5, ..DedupParams::default() }).is_err());
        assert!(dedup(&m, &DedupParams { neighbors: 0, ..DedupParams::default() }).is_err());
    }

    #[test]
    fn approximate_never_removes_more_than_exact() {
        let m = clustered(3000, 32, 300, 0.25, 2);
        let exact = dedup(&m, &DedupParams::exact(0.7)).unwrap();
        let approx = dedup(&m, &DedupParams::default()).unwrap();
        assert!(approx.len() >= exact.len(), "{} < {}", approx.len(), exact.len());
        // Each approximate survivor set is still valid against its own candidates.
        assert!(approx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn curve_edge_cases() {
        let spec = EmbedderSpec::default();
        let same = vec!["dragon"; 50];
        let c = diversity_curve(&same, &[1, 10, 50], &spec, &DedupParams::exact(0.7)).unwrap();
        assert_eq!(c.unique_counts, vec![1, 1, 1]);
        let empty: Vec<&str> = vec![];
        assert!(diversity_curve(&empty, &[], &spec, &DedupParams::default()).is_err());
        assert!(diversity_curve(&same, &[10, 5], &spec, &DedupParams::default()).is_err());
        assert!(diversity_curve(&same, &[51], &spec, &DedupParams::default()).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn idempotent_and_pairwise_clean(seed in 0u64..1000, n in 2usize..120, t in 0.3f32..0.95) {
            let m = clustered(n, 8, 6, 0.5, seed);
            let p = DedupParams::exact(t);
            let s = dedup(&m, &p).unwrap();
            let again = dedup(&m.select(&s), &p).unwrap();
            proptest::prop_assert_eq!(again, (0..s.len()).collect::<Vec<_>>());
            for (a, &i) in s.iter().enumerate() {
                for &j in &s[..a] {
                    proptest::prop_assert!(dot(m.row(i), m.row(j)) <= t);
                }
            }
        }
    }
}
