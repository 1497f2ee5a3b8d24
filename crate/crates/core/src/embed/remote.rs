use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::remote::{run_bounded, RemoteConfig};
use crate::store::EmbeddingMatrix;

use super::REMOTE_BATCH_SIZE;

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

fn embed_chunk(remote: &RemoteConfig, dim: usize, texts: &[String]) -> Result<Vec<f32>> {
    let resp = remote.post_json(&json!({ "texts": texts }))?;
    let parsed: EmbedResponse = serde_json::from_value(resp).map_err(|e| Error::Backend {
        status: None,
        retryable: false,
        message: format!("malformed embedding response: {e}"),
    })?;
    if parsed.vectors.len() != texts.len() {
        return Err(Error::Backend {
            status: None,
            retryable: false,
            message: format!(
                "embedding service returned {} vectors for {} texts",
                parsed.vectors.len(),
                texts.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(texts.len() * dim);
    for (i, mut v) in parsed.vectors.into_iter().enumerate() {
        if v.len() != dim {
            return Err(Error::Backend {
                status: None,
                retryable: false,
                message: format!("vector {i} has dim {}, expected {dim}", v.len()),
            });
        }
        if !crate::store::matrix_normalize(&mut v) {
            return Err(Error::Backend {
                status: None,
                retryable: false,
                message: format!("vector {i} has zero or non-finite norm"),
            });
        }
        out.extend(v);
    }
    Ok(out)
}

/// Sends texts in batches with bounded concurrency. Any failed batch fails
/// the whole call.
pub(super) fn embed_remote<S: AsRef<str>>(
    remote: &RemoteConfig,
    dim: usize,
    texts: &[S],
) -> Result<EmbeddingMatrix> {
    let owned: Vec<String> = texts.iter().map(|t| t.as_ref().to_owned()).collect();
    let chunks: Vec<&[String]> = owned.chunks(REMOTE_BATCH_SIZE).collect();
    let results = run_bounded(chunks, remote.max_in_flight, |c| embed_chunk(remote, dim, c));
    let mut data = Vec::with_capacity(owned.len() * dim);
    for r in results {
        data.extend(r?);
    }
    EmbeddingMatrix::new(dim, data)
}
