use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backend::{annotate_prompt, RemoteLlm, TextGenerator};
use super::stage::fan_out;
use super::{
    expand_stage, nsfw_filter, seed_stage, GenerationConfig, LlmBackend, Stage, StageItem, StageOutput,
    StageTemplates, TemplateMock,
};
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::images::{render_and_store, ImageBackend, MockImageBackend, RemoteImageBackend};
use crate::store::{write_atomic, write_corpus, FileKv, PromptRecord};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const KV_DIR: &str = "kv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub parents: usize,
    /// Children asked of the backend: parents × fanout × passes.
    pub requested: usize,
    pub generated: usize,
    pub shortfall: usize,
    pub dedup_removed: usize,
    pub output: usize,
    /// Wall time; logged but not persisted so reruns stay byte-identical.
    #[serde(skip)]
    pub duration_ms: u64,
    /// Loaded from a checkpoint instead of recomputed.
    #[serde(default)]
    pub resumed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub config_fingerprint: String,
    pub seed: u64,
    pub backend: String,
    pub categories: usize,
    pub stages: Vec<StageReport>,
    pub records: usize,
    pub nsfw_flagged: usize,
    pub images: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub corpus_path: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

pub fn build_backend(config: &GenerationConfig) -> Result<Box<dyn TextGenerator>> {
    Ok(match config.backend {
        LlmBackend::TemplateMock => Box::new(TemplateMock::new()),
        LlmBackend::RemoteLlm => {
            let remote = config
                .remote_llm
                .clone()
                .ok_or_else(|| Error::Param("remote-llm backend needs settings".into()))?;
            let templates = StageTemplates::load(config.templates_dir.as_deref())?;
            Box::new(RemoteLlm::new(remote, templates)?)
        }
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    fingerprint: String,
    report: StageReport,
}

fn write_checkpoint(path: &Path, fingerprint: &str, report: &StageReport, out: &StageOutput) -> Result<()> {
    write_atomic(path, |w| {
        let header = CheckpointHeader {
            fingerprint: fingerprint.to_owned(),
            report: report.clone(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for item in &out.items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Loads a checkpoint when it was written under the same configuration and
/// is complete; anything else means "recompute".
fn read_checkpoint(path: &Path, fingerprint: &str, stage: Stage) -> Option<(StageOutput, StageReport)> {
    let file = File::open(path).ok()?;
    let mut lines = BufReader::new(file).lines();
    let header: CheckpointHeader = serde_json::from_str(&lines.next()?.ok()?).ok()?;
    if header.fingerprint != fingerprint || header.report.stage != stage {
        return None;
    }
    let mut items = Vec::with_capacity(header.report.output);
    for line in lines {
        let line = line.ok()?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str::<StageItem>(&line).ok()?);
    }
    if items.len() != header.report.output {
        tracing::warn!(path = %path.display(), "ignoring truncated checkpoint");
        return None;
    }
    let mut report = header.report;
    report.resumed = true;
    Some((StageOutput { stage, items }, report))
}

fn annotate_stage(
    backend: &dyn TextGenerator,
    prompts: &StageOutput,
) -> Result<(StageOutput, StageReport)> {
    let started = Instant::now();
    let annotated: Vec<Result<StageItem>> = fan_out(backend, &prompts.items, |item| {
        let seed = derive_seed(item.seed, Stage::Annotation.as_str(), item.id, 0);
        let annotations = annotate_prompt(backend, &item.text, &item.lineage, seed)?;
        Ok(StageItem {
            annotations: Some(annotations),
            ..item.clone()
        })
    });
    let items = annotated.into_iter().collect::<Result<Vec<_>>>()?;
    let report = StageReport {
        stage: Stage::Annotation,
        parents: prompts.len(),
        requested: prompts.len(),
        generated: items.len(),
        shortfall: 0,
        dedup_removed: 0,
        output: items.len(),
        duration_ms: started.elapsed().as_millis() as u64,
        resumed: false,
    };
    Ok((
        StageOutput {
            stage: Stage::Annotation,
            items,
        },
        report,
    ))
}

/// Runs every stage into `out_dir`, writing `stage-<name>.jsonl`
/// checkpoints, `corpus.jsonl` and `manifest.json`. Stages whose checkpoint
/// matches the configuration fingerprint are loaded instead of rerun. On a
/// stage failure an aborted manifest with the completed stages is written
/// before the error is returned.
pub fn run_pipeline(config: &GenerationConfig, out_dir: &Path) -> Result<PipelineOutput> {
    config.validate()?;
    let backend = build_backend(config)?;
    run_pipeline_with(config, backend.as_ref(), out_dir)
}

pub fn run_pipeline_with(
    config: &GenerationConfig,
    backend: &dyn TextGenerator,
    out_dir: &Path,
) -> Result<PipelineOutput> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let fingerprint = format!("{:016x}", config.fingerprint());
    let categories = config.resolved_categories();
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut manifest = Manifest {
        status: RunStatus::Aborted,
        config_fingerprint: fingerprint.clone(),
        seed: config.seed,
        backend: backend.backend_id().to_owned(),
        categories: categories.len(),
        stages: Vec::new(),
        records: 0,
        nsfw_flagged: 0,
        images: 0,
        error: None,
    };

    let mut current = seed_stage(&categories, config.seed);
    let stages = Stage::EXPANSION.iter().copied().chain([Stage::Annotation]);
    for stage in stages {
        let path = out_dir.join(stage.checkpoint_name());
        if let Some((out, report)) = read_checkpoint(&path, &fingerprint, stage) {
            tracing::info!(stage = stage.as_str(), items = out.len(), "resumed from checkpoint");
            manifest.stages.push(report);
            current = out;
            continue;
        }
        let result = if stage == Stage::Annotation {
            annotate_stage(backend, &current)
        } else {
            expand_stage(config, backend, stage, &current)
        };
        let (out, report) = match result {
            Ok(r) => r,
            Err(e) => {
                tracing::error!(stage = stage.as_str(), error = %e, "stage aborted");
                manifest.error = Some(format!("stage {}: {e}", stage.as_str()));
                write_manifest(&manifest_path, &manifest)?;
                return Err(e);
            }
        };
        tracing::info!(
            stage = stage.as_str(),
            output = report.output,
            dedup_removed = report.dedup_removed,
            shortfall = report.shortfall,
            duration_ms = report.duration_ms,
            "stage complete"
        );
        write_checkpoint(&path, &fingerprint, &report, &out)?;
        manifest.stages.push(report);
        current = out;
    }

    let records: Vec<PromptRecord> = current
        .items
        .into_iter()
        .map(|item| PromptRecord {
            lineage: item.lineage,
            annotations: item.annotations.unwrap_or_default(),
            ..PromptRecord::new(item.id, item.text)
        })
        .collect();
    let (mut kept, flagged) = match nsfw_filter(config, records) {
        Ok(r) => r,
        Err(e) => {
            manifest.error = Some(format!("nsfw filter: {e}"));
            write_manifest(&manifest_path, &manifest)?;
            return Err(e);
        }
    };
    manifest.nsfw_flagged = flagged.len();

    if config.preview_images {
        let images: Box<dyn ImageBackend> = match &config.remote_images {
            Some(remote) => Box::new(RemoteImageBackend::new(remote.clone())?),
            None => Box::new(MockImageBackend::default()),
        };
        let kv = FileKv::open(out_dir.join(KV_DIR))?;
        let keys: Vec<Result<String>> = crate::parallel::map_slice(&kept, |r| {
            let seed = derive_seed(config.seed, "image", r.id, 0);
            render_and_store(images.as_ref(), &kv, &r.prompt, seed)
        });
        for (r, key) in kept.iter_mut().zip(keys) {
            r.image_ref = Some(key?);
        }
        manifest.images = kept.len();
    }

    let mut records = kept;
    records.extend(flagged);
    records.sort_by_key(|r| r.id);
    let corpus_path = out_dir.join(CORPUS_FILE);
    write_corpus(&records, &corpus_path)?;
    manifest.records = records.len();
    manifest.status = RunStatus::Complete;
    write_manifest(&manifest_path, &manifest)?;
    Ok(PipelineOutput {
        corpus_path,
        manifest_path,
        manifest,
    })
}

fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, manifest)?;
        w.write_all(b"\n")
    })?;
    Ok(())
}
