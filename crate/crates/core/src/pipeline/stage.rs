use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backend::{compose_prompt, TextGenerator};
use super::run::StageReport;
use super::GenerationConfig;
use crate::dedup::dedup;
use crate::embed::embed_batch;
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::store::{AnnotationSet, ExpansionLineage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Category,
    Subcategory,
    Subsubcategory,
    Idea,
    Location,
    Subject,
    Prompt,
    Annotation,
}

impl Stage {
    /// Stages produced by [`expand_stage`], in pipeline order.
    pub const EXPANSION: [Stage; 6] = [
        Stage::Subcategory,
        Stage::Subsubcategory,
        Stage::Idea,
        Stage::Location,
        Stage::Subject,
        Stage::Prompt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Category => "category",
            Stage::Subcategory => "subcategory",
            Stage::Subsubcategory => "subsubcategory",
            Stage::Idea => "idea",
            Stage::Location => "location",
            Stage::Subject => "subject",
            Stage::Prompt => "prompt",
            Stage::Annotation => "annotation",
        }
    }

    pub fn parent(self) -> Option<Stage> {
        match self {
            Stage::Category => None,
            Stage::Subcategory => Some(Stage::Category),
            Stage::Subsubcategory => Some(Stage::Subcategory),
            Stage::Idea => Some(Stage::Subsubcategory),
            Stage::Location => Some(Stage::Idea),
            Stage::Subject => Some(Stage::Location),
            Stage::Prompt => Some(Stage::Subject),
            Stage::Annotation => Some(Stage::Prompt),
        }
    }

    pub fn checkpoint_name(self) -> String {
        format!("stage-{}.jsonl", self.as_str())
    }
}

fn set_lineage_field(lineage: &mut ExpansionLineage, stage: Stage, text: &str) {
    let slot = match stage {
        Stage::Category => &mut lineage.category,
        Stage::Subcategory => &mut lineage.subcategory,
        Stage::Subsubcategory => &mut lineage.subsubcategory,
        Stage::Idea => &mut lineage.idea_caption,
        Stage::Location => &mut lineage.location_caption,
        Stage::Subject => &mut lineage.subject_caption,
        Stage::Prompt | Stage::Annotation => return,
    };
    *slot = text.to_owned();
}

/// One generated item. `lineage` holds the texts of every ancestor plus this
/// item's own text in its stage's slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageItem {
    pub id: u64,
    pub parent: Option<u64>,
    pub seed: u64,
    pub text: String,
    pub lineage: ExpansionLineage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<AnnotationSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub stage: Stage,
    pub items: Vec<StageItem>,
}

impl StageOutput {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.text.as_str()).collect()
    }
}

/// The root stage: one item per seed category.
pub fn seed_stage(categories: &[String], seed: u64) -> StageOutput {
    let items = categories
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut lineage = ExpansionLineage::default();
            set_lineage_field(&mut lineage, Stage::Category, c);
            StageItem {
                id: i as u64,
                parent: None,
                seed: derive_seed(seed, Stage::Category.as_str(), i as u64, 0),
                text: c.clone(),
                lineage,
                annotations: None,
            }
        })
        .collect();
    StageOutput {
        stage: Stage::Category,
        items,
    }
}

/// Runs `f` over `items`, honouring the backend's concurrency cap.
pub(super) fn fan_out<'a, T, F>(backend: &dyn TextGenerator, items: &'a [StageItem], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&'a StageItem) -> T + Sync + Send,
{
    match backend.max_in_flight() {
        Some(limit) => crate::remote::run_bounded(items.iter().collect(), limit, f),
        None => crate::parallel::map_range(items.len(), |i| f(&items[i])),
    }
}

/// Expands every parent into `fanout[stage]` children (times `passes` at the
/// subcategory stage), then deduplicates the combined output when enabled.
pub fn expand_stage(
    config: &GenerationConfig,
    backend: &dyn TextGenerator,
    stage: Stage,
    parents: &StageOutput,
) -> Result<(StageOutput, StageReport)> {
    let started = Instant::now();
    if stage.parent() != Some(parents.stage) || stage == Stage::Annotation {
        return Err(Error::Invalid(format!(
            "stage {} cannot expand {} items",
            stage.as_str(),
            parents.stage.as_str()
        )));
    }
    let n = config.fanout.for_stage(stage);
    let reps = if stage == Stage::Subcategory { config.passes } else { 1 };

    let per_parent: Vec<Result<Vec<(u64, Vec<String>)>>> = fan_out(backend, &parents.items, |p| {
        (0..reps as u64)
            .map(|rep| {
                let call_seed = derive_seed(p.seed, stage.as_str(), p.id, rep);
                let texts = if stage == Stage::Prompt {
                    let l = &p.lineage;
                    vec![compose_prompt(
                        backend,
                        &l.idea_caption,
                        &l.location_caption,
                        &l.subject_caption,
                        call_seed,
                    )?]
                } else {
                    backend.expand(stage, &p.lineage, n, call_seed)?
                };
                Ok((rep, texts))
            })
            .collect()
    });

    let mut candidates: Vec<(usize, String, u64)> = Vec::new();
    let mut generated = 0usize;
    let mut shortfall = 0usize;
    for (pi, batch) in per_parent.into_iter().enumerate() {
        let parent = &parents.items[pi];
        for (rep, mut texts) in batch? {
            texts.truncate(n);
            let mut kept = 0;
            for (j, t) in texts.into_iter().enumerate() {
                let t = t.trim().to_owned();
                if t.is_empty() {
                    continue;
                }
                kept += 1;
                let seed = derive_seed(parent.seed, stage.as_str(), parent.id, rep * n as u64 + j as u64 + 1);
                candidates.push((pi, t, seed));
            }
            generated += kept;
            shortfall += n - kept;
        }
    }
    if shortfall > 0 {
        tracing::warn!(stage = stage.as_str(), shortfall, "backend returned fewer items than requested");
    }

    let survivors: Vec<usize> = if config.dedup_enabled && !candidates.is_empty() {
        let texts: Vec<&str> = candidates.iter().map(|c| c.1.as_str()).collect();
        let matrix = embed_batch(&config.embedder, &texts)?;
        dedup(&matrix, &config.dedup)?
    } else {
        (0..candidates.len()).collect()
    };

    let items: Vec<StageItem> = survivors
        .iter()
        .enumerate()
        .map(|(new_id, &ci)| {
            let (pi, text, seed) = &candidates[ci];
            let parent = &parents.items[*pi];
            let mut lineage = parent.lineage.clone();
            set_lineage_field(&mut lineage, stage, text);
            StageItem {
                id: new_id as u64,
                parent: Some(parent.id),
                seed: *seed,
                text: text.clone(),
                lineage,
                annotations: None,
            }
        })
        .collect();

    let report = StageReport {
        stage,
        parents: parents.len(),
        requested: parents.len() * n * reps,
        generated,
        shortfall,
        dedup_removed: candidates.len() - items.len(),
        output: items.len(),
        duration_ms: started.elapsed().as_millis() as u64,
        resumed: false,
    };
    Ok((StageOutput { stage, items }, report))
}
