//! Recursive concept expansion: categories → subcategories →
//! sub-subcategories → ideas → locations → subjects → prompts, with
//! per-stage deduplication, annotation prediction and NSFW filtering.

mod backend;
mod config;
mod mock;
mod nsfw;
mod run;
mod stage;
mod templates;

pub use backend::{annotate_prompt, compose_prompt, RemoteLlm, TextGenerator};
pub use config::{default_categories, Fanout, GenerationConfig, LlmBackend, NsfwMode};
pub use mock::TemplateMock;
pub use nsfw::{nsfw_filter, Blocklist};
pub use run::{
    build_backend, run_pipeline, run_pipeline_with, Manifest, PipelineOutput, RunStatus, StageReport, CORPUS_FILE,
    KV_DIR, MANIFEST_FILE,
};
pub use stage::{expand_stage, seed_stage, Stage, StageItem, StageOutput};
pub use templates::StageTemplates;
