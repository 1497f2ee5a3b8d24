use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use super::{write_atomic, PromptRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WriteSummary {
    pub count: usize,
    pub bytes: u64,
}

/// Writes `records` as JSONL, one record per line.
pub fn write_corpus(records: &[PromptRecord], path: &Path) -> Result<WriteSummary> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id) {
            return Err(Error::DuplicateId(r.id));
        }
        if r.prompt.trim().is_empty() {
            return Err(Error::Invalid(format!("record {} has an empty prompt", r.id)));
        }
    }
    let bytes = write_atomic(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    Ok(WriteSummary {
        count: records.len(),
        bytes,
    })
}

/// Reads a JSONL corpus in file order. Unknown keys are ignored; blank lines
/// are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<PromptRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PromptRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.prompt.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("record {} has an empty prompt", record.id),
            });
        }
        if !seen.insert(record.id) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate id {}", record.id),
            });
        }
        records.push(record);
    }
    Ok(records)
}
