use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::Stage;
use crate::dedup::DedupParams;
use crate::embed::EmbedderSpec;
use crate::error::{Error, Result};
use crate::remote::RemoteConfig;

const CATEGORIES: &str = include_str!("../../data/categories.txt");

/// The checked-in seed categories (invented placeholders).
pub fn default_categories() -> Vec<String> {
    CATEGORIES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// Children requested per parent item at each expansion stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fanout {
    pub subcats: usize,
    pub subsubcats: usize,
    pub ideas: usize,
    pub locations: usize,
    pub subjects: usize,
}

impl Default for Fanout {
    fn default() -> Self {
        Self {
            subcats: 10,
            subsubcats: 10,
            ideas: 20,
            locations: 10,
            subjects: 5,
        }
    }
}

impl Fanout {
    pub fn new(subcats: usize, subsubcats: usize, ideas: usize, locations: usize, subjects: usize) -> Self {
        Self {
            subcats,
            subsubcats,
            ideas,
            locations,
            subjects,
        }
    }

    pub fn for_stage(&self, stage: Stage) -> usize {
        match stage {
            Stage::Subcategory => self.subcats,
            Stage::Subsubcategory => self.subsubcats,
            Stage::Idea => self.ideas,
            Stage::Location => self.locations,
            Stage::Subject => self.subjects,
            Stage::Category | Stage::Prompt | Stage::Annotation => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmBackend {
    TemplateMock,
    RemoteLlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NsfwMode {
    Blocklist,
    Remote,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Seed categories; empty means the checked-in list.
    pub categories: Vec<String>,
    /// Passes over the categories at the subcategory stage, combined before
    /// deduplication.
    pub passes: usize,
    pub fanout: Fanout,
    pub dedup_enabled: bool,
    pub dedup: DedupParams,
    pub embedder: EmbedderSpec,
    pub seed: u64,
    pub backend: LlmBackend,
    pub remote_llm: Option<RemoteConfig>,
    /// Directory of `<stage>.txt` instruction templates overriding the
    /// built-in ones.
    pub templates_dir: Option<PathBuf>,
    pub nsfw: NsfwMode,
    /// Extra blocklist file; terms are added to the built-in list.
    pub blocklist_path: Option<PathBuf>,
    pub remote_nsfw: Option<RemoteConfig>,
    /// Render a preview image per kept record into the artifact KV store.
    pub preview_images: bool,
    /// Text-to-image service; the procedural mock is used when unset.
    pub remote_images: Option<RemoteConfig>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            categories: Vec::new(),
            passes: 1,
            fanout: Fanout::default(),
            dedup_enabled: true,
            dedup: DedupParams::default(),
            embedder: EmbedderSpec::default(),
            seed: 0,
            backend: LlmBackend::TemplateMock,
            remote_llm: None,
            templates_dir: None,
            nsfw: NsfwMode::Blocklist,
            blocklist_path: None,
            remote_nsfw: None,
            preview_images: false,
            remote_images: None,
        }
    }
}

impl GenerationConfig {
    pub fn resolved_categories(&self) -> Vec<String> {
        if self.categories.is_empty() {
            default_categories()
        } else {
            self.categories.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.fanout;
        if [f.subcats, f.subsubcats, f.ideas, f.locations, f.subjects].contains(&0) {
            return Err(Error::Param("every fanout value must be at least 1".into()));
        }
        if self.passes == 0 {
            return Err(Error::Param("passes must be at least 1".into()));
        }
        if self.resolved_categories().iter().any(|c| c.trim().is_empty()) {
            return Err(Error::Param("categories must be non-empty strings".into()));
        }
        if self.dedup_enabled {
            self.dedup.validate()?;
            self.embedder.validate()?;
        }
        if self.backend == LlmBackend::RemoteLlm {
            self.remote_llm
                .as_ref()
                .ok_or_else(|| Error::Param("remote-llm backend needs [remote_llm] settings".into()))?
                .validate()?;
        }
        if self.nsfw == NsfwMode::Remote {
            self.remote_nsfw
                .as_ref()
                .ok_or_else(|| Error::Param("remote NSFW mode needs [remote_nsfw] settings".into()))?
                .validate()?;
        }
        Ok(())
    }

    /// Stable fingerprint of every setting that affects generated content.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::hash::hash_str(0, &json)
    }
}
