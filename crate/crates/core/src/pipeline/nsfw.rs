use regex::Regex;
use serde::Deserialize;
use serde_json::json;

use super::{GenerationConfig, NsfwMode};
use crate::error::{Error, Result};
use crate::remote::RemoteConfig;
use crate::store::PromptRecord;

const BUILTIN_BLOCKLIST: &str = include_str!("../../data/blocklist.txt");

/// Case-insensitive whole-word term matcher.
#[derive(Debug, Clone)]
pub struct Blocklist {
    terms: Vec<String>,
    pattern: Option<Regex>,
}

impl Blocklist {
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut terms: Vec<String> = terms
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty() && !t.starts_with('#'))
            .collect();
        terms.sort();
        terms.dedup();
        let pattern = (!terms.is_empty()).then(|| {
            let alts: Vec<String> = terms.iter().map(|t| regex::escape(t)).collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("escaped terms form a valid regex")
        });
        Self { terms, pattern }
    }

    pub fn builtin() -> Self {
        Self::from_terms(BUILTIN_BLOCKLIST.lines())
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn is_flagged(&self, text: &str) -> bool {
        self.pattern.as_ref().is_some_and(|p| p.is_match(text))
    }

    /// Splits records into (kept, flagged); flagged records get
    /// `nsfw_flagged = true`.
    pub fn filter(&self, records: Vec<PromptRecord>) -> (Vec<PromptRecord>, Vec<PromptRecord>) {
        let flags: Vec<bool> = records.iter().map(|r| self.is_flagged(&r.prompt)).collect();
        split(records, &flags)
    }
}

fn split(records: Vec<PromptRecord>, flags: &[bool]) -> (Vec<PromptRecord>, Vec<PromptRecord>) {
    let mut kept = Vec::new();
    let mut flagged = Vec::new();
    for (mut r, &f) in records.into_iter().zip(flags) {
        if f {
            r.nsfw_flagged = true;
            flagged.push(r);
        } else {
            kept.push(r);
        }
    }
    (kept, flagged)
}

#[derive(Deserialize)]
struct FlagResponse {
    flags: Vec<bool>,
}

/// Remote classifier: POST `{"texts": [...]}` → `{"flags": [bool, ...]}`.
fn remote_flags(remote: &RemoteConfig, records: &[PromptRecord]) -> Result<Vec<bool>> {
    let mut flags = Vec::with_capacity(records.len());
    for chunk in records.chunks(256) {
        let texts: Vec<&str> = chunk.iter().map(|r| r.prompt.as_str()).collect();
        let resp = remote.post_json(&json!({ "texts": texts }))?;
        let parsed: FlagResponse = serde_json::from_value(resp).map_err(|e| Error::Backend {
            status: None,
            retryable: false,
            message: format!("malformed NSFW response: {e}"),
        })?;
        if parsed.flags.len() != chunk.len() {
            return Err(Error::Backend {
                status: None,
                retryable: false,
                message: format!("{} flags for {} texts", parsed.flags.len(), chunk.len()),
            });
        }
        flags.extend(parsed.flags);
    }
    Ok(flags)
}

/// Applies the configured NSFW mode.
pub fn nsfw_filter(
    config: &GenerationConfig,
    records: Vec<PromptRecord>,
) -> Result<(Vec<PromptRecord>, Vec<PromptRecord>)> {
    match config.nsfw {
        NsfwMode::Off => Ok((records, Vec::new())),
        NsfwMode::Blocklist => {
            let mut terms: Vec<String> = Blocklist::builtin().terms().to_vec();
            if let Some(path) = &config.blocklist_path {
                let extra = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                terms.extend(extra.lines().map(str::to_owned));
            }
            Ok(Blocklist::from_terms(terms).filter(records))
        }
        NsfwMode::Remote => {
            let remote = config
                .remote_nsfw
                .as_ref()
                .ok_or_else(|| Error::Param("remote NSFW mode needs settings".into()))?;
            let flags = remote_flags(remote, &records)?;
            Ok(split(records, &flags))
        }
    }
}
