//! Record model and durable storage.

mod corpus;
mod kv;
mod matrix;
mod record;

pub use corpus::{read_corpus, write_corpus, WriteSummary};
pub use kv::{content_key, FileKv, KvStore, MemKv};
pub use matrix::{normalize as matrix_normalize, 
    read_embeddings, read_f32_matrix, write_embeddings, write_f32_matrix, EmbeddingMatrix,
    MATRIX_HEADER_LEN, MATRIX_MAGIC, MATRIX_VERSION, NORM_TOLERANCE,
};
pub use record::{AnnotationField, AnnotationSet, ExpansionLineage, PromptRecord};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a partially written file.
pub(crate) fn write_atomic<F>(path: &Path, body: F) -> Result<u64>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| Error::io(&tmp, e))?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
    let bytes = file.metadata().map_err(|e| Error::io(&tmp, e))?.len();
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}
