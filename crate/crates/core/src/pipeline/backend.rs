use serde_json::{json, Value};

use super::{Stage, StageTemplates};
use crate::error::{Error, Result};
use crate::remote::RemoteConfig;
use crate::store::{AnnotationField, AnnotationSet, ExpansionLineage};

/// A text generator driving every LLM-backed step.
pub trait TextGenerator: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Concurrency cap for remote backends; `None` means the call is cheap
    /// and may run on the data-parallel pool.
    fn max_in_flight(&self) -> Option<usize> {
        None
    }

    /// Up to `n` children for one parent. `context` holds the parent's
    /// lineage.
    fn expand(&self, stage: Stage, context: &ExpansionLineage, n: usize, seed: u64) -> Result<Vec<String>>;

    /// One prompt merging the idea, location and subject in `context`.
    fn compose(&self, context: &ExpansionLineage, seed: u64) -> Result<String>;

    fn annotate(&self, prompt: &str, context: &ExpansionLineage, seed: u64) -> Result<AnnotationSet>;

    /// A short map label summarizing nearby subjects.
    fn label(&self, subjects: &[String], seed: u64) -> Result<String>;
}

/// Validates the fragments, then asks the backend for a single prompt.
pub fn compose_prompt(
    backend: &dyn TextGenerator,
    idea: &str,
    location: &str,
    subject: &str,
    seed: u64,
) -> Result<String> {
    for (name, v) in [("idea", idea), ("location", location), ("subject", subject)] {
        if v.trim().is_empty() {
            return Err(Error::Invalid(format!("cannot compose a prompt with an empty {name}")));
        }
    }
    let context = ExpansionLineage {
        idea_caption: idea.to_owned(),
        location_caption: location.to_owned(),
        subject_caption: subject.to_owned(),
        ..Default::default()
    };
    let text = backend.compose(&context, seed)?;
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if text.is_empty() {
        return Err(Error::Backend {
            status: None,
            retryable: false,
            message: "backend returned an empty prompt".into(),
        });
    }
    Ok(text)
}

/// Predicts the annotation set and checks all six fields are present.
pub fn annotate_prompt(
    backend: &dyn TextGenerator,
    prompt: &str,
    lineage: &ExpansionLineage,
    seed: u64,
) -> Result<AnnotationSet> {
    if prompt.trim().is_empty() {
        return Err(Error::Invalid("cannot annotate an empty prompt".into()));
    }
    let a = backend.annotate(prompt, lineage, seed)?;
    if let Some(f) = AnnotationField::ALL.iter().find(|f| a.get(**f).trim().is_empty()) {
        return Err(Error::Backend {
            status: None,
            retryable: false,
            message: format!("annotation field {} is empty", f.as_str()),
        });
    }
    Ok(a)
}

/// Client for an instruction-following LLM service.
///
/// Request: `{"instruction": <rendered template>, "n": <count>, "context": {...}}`.
/// Response: `{"items": [...]}`.
#[derive(Debug, Clone)]
pub struct RemoteLlm {
    remote: RemoteConfig,
    templates: StageTemplates,
}

impl RemoteLlm {
    pub fn new(remote: RemoteConfig, templates: StageTemplates) -> Result<Self> {
        remote.validate()?;
        Ok(Self { remote, templates })
    }

    fn call(&self, template: &str, context: &ExpansionLineage, n: usize, prompt: &str, samples: &[String]) -> Result<Vec<Value>> {
        let instruction = self.templates.render(template, context, n, prompt, samples)?;
        let mut ctx = serde_json::to_value(context).expect("lineage serializes");
        if let Value::Object(map) = &mut ctx {
            map.retain(|_, v| v.as_str().is_some_and(|s| !s.is_empty()));
            if !prompt.is_empty() {
                map.insert("prompt".into(), json!(prompt));
            }
            if !samples.is_empty() {
                map.insert("samples".into(), json!(samples));
            }
        }
        let resp = self.remote.post_json(&json!({
            "instruction": instruction,
            "n": n,
            "context": ctx,
        }))?;
        match resp.get("items") {
            Some(Value::Array(items)) => Ok(items.clone()),
            _ => Err(Error::Backend {
                status: None,
                retryable: false,
                message: "response has no `items` array".into(),
            }),
        }
    }

    fn strings(items: Vec<Value>) -> Result<Vec<String>> {
        items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(Error::Backend {
                    status: None,
                    retryable: false,
                    message: format!("expected string item, got {other}"),
                }),
            })
            .collect()
    }

    fn first_string(items: Vec<Value>) -> Result<String> {
        Self::strings(items)?.into_iter().next().ok_or_else(|| Error::Backend {
            status: None,
            retryable: false,
            message: "response has no items".into(),
        })
    }
}

impl TextGenerator for RemoteLlm {
    fn backend_id(&self) -> &str {
        "remote-llm"
    }

    fn max_in_flight(&self) -> Option<usize> {
        Some(self.remote.max_in_flight)
    }

    fn expand(&self, stage: Stage, context: &ExpansionLineage, n: usize, _seed: u64) -> Result<Vec<String>> {
        Self::strings(self.call(stage.as_str(), context, n, "", &[])?)
    }

    fn compose(&self, context: &ExpansionLineage, _seed: u64) -> Result<String> {
        Self::first_string(self.call("prompt", context, 1, "", &[])?)
    }

    fn annotate(&self, prompt: &str, context: &ExpansionLineage, _seed: u64) -> Result<AnnotationSet> {
        let items = self.call("annotation", context, 1, prompt, &[])?;
        let obj = items
            .into_iter()
            .next()
            .and_then(|v| v.as_object().cloned())
            .ok_or_else(|| Error::Backend {
                status: None,
                retryable: false,
                message: "annotation response must hold one JSON object".into(),
            })?;
        let field = |f: AnnotationField| -> Result<String> {
            obj.get(f.as_str())
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| Error::Backend {
                    status: None,
                    retryable: false,
                    message: format!("annotation response is missing field `{}`", f.as_str()),
                })
        };
        Ok(AnnotationSet {
            location: field(AnnotationField::Location)?,
            subject: field(AnnotationField::Subject)?,
            lighting: field(AnnotationField::Lighting)?,
            tone: field(AnnotationField::Tone)?,
            mood: field(AnnotationField::Mood)?,
            genre: field(AnnotationField::Genre)?,
        })
    }

    fn label(&self, subjects: &[String], _seed: u64) -> Result<String> {
        Self::first_string(self.call("label", &ExpansionLineage::default(), 1, "", subjects)?)
    }
}
