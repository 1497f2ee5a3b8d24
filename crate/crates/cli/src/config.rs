use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use atlas_core::ann::IvfPqParams;
use atlas_core::artifacts::{LayoutJob, SearchField};
use atlas_core::dedup::DedupParams;
use atlas_core::embed::{EmbedderBackend, EmbedderSpec};
use atlas_core::pipeline::GenerationConfig;
use atlas_core::remote::RemoteConfig;
use prompt_atlas_service::ServiceConfig;

use crate::bench::{DiversityBench, RecallBench};
use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "PROMPT_ATLAS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedSection {
    pub embedder: EmbedderSpec,
    pub fields: Vec<SearchField>,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            embedder: EmbedderSpec::default(),
            fields: vec![SearchField::Prompt],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexSection {
    pub params: IvfPqParams,
    /// Fields to index; empty means every field listed under `[embed]`.
    pub fields: Vec<SearchField>,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self {
            params: IvfPqParams::default(),
            fields: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub recall: RecallBench,
    pub diversity: DiversityBench,
}

/// Everything a subcommand needs, read from TOML and then overridden by
/// flags and environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub artifact_dir: PathBuf,
    /// Applied to every seeded stage when set.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub generate: GenerationConfig,
    pub embed: EmbedSection,
    pub index: IndexSection,
    pub layout: LayoutJob,
    pub serve: ServiceConfig,
    pub bench: BenchSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            artifact_dir: PathBuf::from("atlas"),
            seed: None,
            threads: None,
            generate: GenerationConfig::default(),
            embed: EmbedSection::default(),
            index: IndexSection::default(),
            layout: LayoutJob::default(),
            serve: ServiceConfig::default(),
            bench: BenchSection::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub artifact_dir: Option<PathBuf>,
}

impl CliConfig {
    pub fn from_toml(text: &str, path: &Path) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Config {
                path: path.to_owned(),
                message: "file not found".into(),
            },
            _ => CliError::io(format!("reading {}", path.display()), e),
        })?;
        Self::from_toml(&text, path)
    }

    /// Applies flags, then environment, then propagates the global seed and
    /// artifact directory into every section.
    pub fn resolve(mut self, flags: &Overrides, env: impl Fn(&str) -> Option<String>) -> CliResult<Self> {
        if flags.seed.is_some() {
            self.seed = flags.seed;
        }
        if flags.threads.is_some() {
            self.threads = flags.threads;
        }
        if let Some(dir) = &flags.artifact_dir {
            self.artifact_dir = dir.clone();
        }
        self.apply_env(env);

        if let Some(seed) = self.seed {
            self.generate.seed = seed;
            self.index.params.seed = seed;
            self.layout.layout.seed = seed;
            self.layout.lod.seed = seed;
            self.bench.recall.seed = seed;
        }
        self.serve.artifact_dir = self.artifact_dir.clone();
        if self.index.fields.is_empty() {
            self.index.fields = self.embed.fields.clone();
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        Ok(self)
    }

    /// `PROMPT_ATLAS_{LLM,NSFW,IMAGES,EMBED}_{ENDPOINT,TOKEN}`. An endpoint
    /// creates the remote section when it is missing; a token fills the
    /// existing one.
    fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) {
        let var = |svc: &str, key: &str| env(&format!("{ENV_PREFIX}_{svc}_{key}")).filter(|v| !v.is_empty());
        let merge = |slot: &mut Option<RemoteConfig>, svc: &str| {
            if let Some(endpoint) = var(svc, "ENDPOINT") {
                slot.get_or_insert_with(RemoteConfig::default).endpoint = endpoint;
            }
            if let (Some(token), Some(cfg)) = (var(svc, "TOKEN"), slot.as_mut()) {
                cfg.token = Some(token);
            }
        };
        merge(&mut self.generate.remote_llm, "LLM");
        merge(&mut self.generate.remote_nsfw, "NSFW");
        merge(&mut self.generate.remote_images, "IMAGES");
        merge(&mut self.serve.remote_images, "IMAGES");
        for spec in [&mut self.embed.embedder, &mut self.generate.embedder] {
            if spec.backend == EmbedderBackend::Remote {
                merge(&mut spec.remote, "EMBED");
            }
        }
    }

    /// JSON form of the resolved configuration; tokens are never included.
    pub fn effective_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Same dedup settings the generator uses, for the diversity bench.
    pub fn bench_dedup(&self) -> DedupParams {
        self.bench.diversity.dedup.unwrap_or(self.generate.dedup)
    }
}
