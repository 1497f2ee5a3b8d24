//! Text to vector backends.
//!
//! The feature-hash backend is deterministic and dependency-free: it keeps the
//! "similar text, nearby vector" property that dedup, search and layout rely
//! on. The remote backend talks to a sentence-embedding service.

mod feature_hash;
mod remote;

pub use feature_hash::{feature_hash_vector, tokenize};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::remote::RemoteConfig;
use crate::store::EmbeddingMatrix;

pub const DEFAULT_OFFLINE_DIM: usize = 128;
pub const DEFAULT_REMOTE_DIM: usize = 768;
pub const REMOTE_BATCH_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderBackend {
    FeatureHash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub backend: EmbedderBackend,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self::feature_hash(DEFAULT_OFFLINE_DIM, 0)
    }
}

impl EmbedderSpec {
    pub fn feature_hash(dim: usize, seed: u64) -> Self {
        Self {
            backend: EmbedderBackend::FeatureHash,
            dim,
            seed,
            remote: None,
        }
    }

    pub fn remote(remote: RemoteConfig) -> Self {
        Self {
            backend: EmbedderBackend::Remote,
            dim: DEFAULT_REMOTE_DIM,
            seed: 0,
            remote: Some(remote),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::Param(format!("embedding dim must be >= 8, got {}", self.dim)));
        }
        if self.backend == EmbedderBackend::Remote {
            match &self.remote {
                Some(r) => r.validate()?,
                None => return Err(Error::Param("remote embedder needs an endpoint".into())),
            }
        }
        Ok(())
    }
}

/// Embeds every text into one L2-normalized row.
pub fn embed_batch<S: AsRef<str> + Sync>(spec: &EmbedderSpec, texts: &[S]) -> Result<EmbeddingMatrix> {
    spec.validate()?;
    if let Some(i) = texts.iter().position(|t| t.as_ref().trim().is_empty()) {
        return Err(Error::Invalid(format!("text at index {i} is empty")));
    }
    match spec.backend {
        EmbedderBackend::FeatureHash => {
            let rows = crate::parallel::map_slice(texts, |t| {
                feature_hash_vector(t.as_ref(), spec.dim, spec.seed)
            });
            EmbeddingMatrix::new(spec.dim, rows.concat())
        }
        EmbedderBackend::Remote => {
            let remote = spec.remote.as_ref().expect("validated");
            remote::embed_remote(remote, spec.dim, texts)
        }
    }
}
