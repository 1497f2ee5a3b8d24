use crate::hash::hash_str;

/// Lowercases and splits on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn add_token(v: &mut [f32], token: &str, seed: u64) {
    let h = hash_str(seed, token);
    let bucket = ((h >> 1) % v.len() as u64) as usize;
    v[bucket] += if h & 1 == 0 { 1.0 } else { -1.0 };
}

/// Signed feature-hash embedding, L2-normalized. Texts without alphanumeric
/// tokens hash as a single token, and a vector cancelled to zero by colliding
/// signs falls back to the whole-text hash.
pub fn feature_hash_vector(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut v = vec![0f32; dim];
    let tokens = tokenize(text);
    if tokens.is_empty() {
        add_token(&mut v, text.trim(), seed);
    }
    for t in &tokens {
        add_token(&mut v, t, seed);
    }
    if v.iter().all(|x| *x == 0.0) {
        add_token(&mut v, &text.to_lowercase(), seed);
    }
    let ok = crate::store::matrix_normalize(&mut v);
    debug_assert!(ok);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn tokenize_splits_and_lowercases() {
        assert_eq!(tokenize("Red-Dragon, castle!"), ["red", "dragon", "castle"]);
        assert!(tokenize("  ...").is_empty());
    }

    #[test]
    fn deterministic_bits() {
        let a = feature_hash_vector("golden sunset", 64, 3);
        let b = feature_hash_vector("golden sunset", 64, 3);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, feature_hash_vector("golden sunset", 64, 4));
    }

    // Sparse recomputation: each token contributes a signed unit to one bucket.
    fn sparse_cos(a: &str, b: &str, dim: u64, seed: u64) -> f64 {
        let sparse = |s: &str| {
            let mut m: HashMap<u64, f64> = HashMap::new();
            for t in tokenize(s) {
                let h = hash_str(seed, &t);
                *m.entry((h >> 1) % dim).or_default() += if h % 2 == 0 { 1.0 } else { -1.0 };
            }
            m
        };
        let (x, y) = (sparse(a), sparse(b));
        let dot: f64 = x.iter().map(|(k, v)| v * y.get(k).copied().unwrap_or(0.0)).sum();
        let n = |m: &HashMap<u64, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
        dot / (n(&x) * n(&y))
    }

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
    }

    #[test]
    fn shared_tokens_rank_closer() {
        let (dim, seed) = (128, 0);
        let a = feature_hash_vector("red dragon castle", dim, seed);
        let b = feature_hash_vector("red dragon cave", dim, seed);
        let c = feature_hash_vector("stock market chart", dim, seed);
        let ab = sparse_cos("red dragon castle", "red dragon cave", dim as u64, seed);
        let ac = sparse_cos("red dragon castle", "stock market chart", dim as u64, seed);
        assert!(ab > ac, "oracle ordering {ab} vs {ac}");
        assert!((cos(&a, &b) - ab).abs() < 1e-6);
        assert!((cos(&a, &c) - ac).abs() < 1e-6);
        assert!(cos(&a, &b) > cos(&a, &c));
    }

    #[test]
    fn cosine_monotone_in_shared_tokens() {
        // Four-token texts sharing 3, 2, 1, 0 tokens with the base.
        let base = "alpha beta gamma delta";
        let others = [
            "alpha beta gamma omega",
            "alpha beta sigma omega",
            "alpha kappa sigma omega",
            "theta kappa sigma omega",
        ];
        let dim = 4096;
        let v0 = feature_hash_vector(base, dim, 9);
        let sims: Vec<f64> = others
            .iter()
            .map(|o| cos(&v0, &feature_hash_vector(o, dim, 9)))
            .collect();
        for w in sims.windows(2) {
            assert!(w[0] > w[1], "{sims:?}");
        }
    }
}
