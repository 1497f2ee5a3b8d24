use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use atlas_core::remote::RemoteConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageBackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub artifact_dir: PathBuf,
    pub bind: String,
    /// Most points returned by one viewport request.
    pub max_points: usize,
    pub history_cap: usize,
    /// Concurrent image generations; extra requests wait.
    pub generation_concurrency: usize,
    pub image_backend: ImageBackendKind,
    pub remote_images: Option<RemoteConfig>,
    /// Where generated images go; defaults to `<artifact_dir>/kv`.
    pub kv_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            artifact_dir: PathBuf::from("atlas"),
            bind: "127.0.0.1:8080".into(),
            max_points: 5000,
            history_cap: 100,
            generation_concurrency: 4,
            image_backend: ImageBackendKind::Mock,
            remote_images: None,
            kv_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> atlas_core::Result<()> {
        use atlas_core::Error;
        if self.max_points == 0 || self.history_cap == 0 || self.generation_concurrency == 0 {
            return Err(Error::Param(
                "max_points, history_cap and generation_concurrency must be at least 1".into(),
            ));
        }
        if self.image_backend == ImageBackendKind::Remote {
            self.remote_images
                .as_ref()
                .ok_or_else(|| Error::Param("remote image backend needs [remote_images] settings".into()))?
                .validate()?;
        }
        Ok(())
    }
}
