//! The per-version artifact directory and the jobs that fill it.
//!
//! ```text
//! <dir>/corpus.jsonl, manifest.json        generate
//! <dir>/embedder.json                      embed (spec shared by all fields)
//! <dir>/embeddings/<field>.bin, .ids.json  embed
//! <dir>/indexes/<field>.pidx               index
//! <dir>/layout/...                         layout (rows follow prompt embeddings)
//! <dir>/kv/                                preview images
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ann::{save_index, IdMatrix, IvfPqIndex, IvfPqParams, CODEBOOK_SIZE};
use crate::embed::{embed_batch, EmbedderSpec};
use crate::error::{Error, Result};
use crate::layout::{
    assign_lod, density_grid, layout, place_labels, LayoutArtifacts, LayoutParams, LodParams, ZoomModel,
    GRID_RESOLUTION,
};
use crate::pipeline::{TextGenerator, CORPUS_FILE, KV_DIR, MANIFEST_FILE};
use crate::store::{read_corpus, read_embeddings, write_atomic, write_embeddings, AnnotationField, PromptRecord};

/// A searchable text field: the prompt or one of the six annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SearchField {
    Prompt,
    Annotation(AnnotationField),
}

impl SearchField {
    pub const ALL: [SearchField; 7] = [
        SearchField::Prompt,
        SearchField::Annotation(AnnotationField::Location),
        SearchField::Annotation(AnnotationField::Subject),
        SearchField::Annotation(AnnotationField::Lighting),
        SearchField::Annotation(AnnotationField::Tone),
        SearchField::Annotation(AnnotationField::Mood),
        SearchField::Annotation(AnnotationField::Genre),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SearchField::Prompt => "prompt",
            SearchField::Annotation(f) => f.as_str(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|f| f.as_str()).collect();
            Error::Invalid(format!("unknown field `{s}`; valid fields: {}", names.join(", ")))
        })
    }

    pub fn text_of(self, r: &PromptRecord) -> &str {
        match self {
            SearchField::Prompt => &r.prompt,
            SearchField::Annotation(f) => r.annotations.get(f),
        }
    }
}

impl fmt::Display for SearchField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for SearchField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SearchField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SearchField::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct ArtifactDir {
    root: PathBuf,
}

impl ArtifactDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join(CORPUS_FILE)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn embedder(&self) -> PathBuf {
        self.root.join("embedder.json")
    }

    pub fn embeddings(&self, field: SearchField) -> PathBuf {
        self.root.join("embeddings").join(format!("{field}.bin"))
    }

    pub fn embedding_ids(&self, field: SearchField) -> PathBuf {
        self.root.join("embeddings").join(format!("{field}.ids.json"))
    }

    pub fn index(&self, field: SearchField) -> PathBuf {
        self.root.join("indexes").join(format!("{field}.pidx"))
    }

    pub fn layout(&self) -> PathBuf {
        self.root.join("layout")
    }

    pub fn kv(&self) -> PathBuf {
        self.root.join(KV_DIR)
    }

    /// Records that are not NSFW-flagged, ascending by id.
    pub fn searchable_records(&self) -> Result<Vec<PromptRecord>> {
        let mut records: Vec<PromptRecord> = read_corpus(&self.corpus())?
            .into_iter()
            .filter(|r| !r.nsfw_flagged)
            .collect();
        records.sort_by_key(|r| r.id);
        Ok(records)
    }

    pub fn read_embedder(&self) -> Result<EmbedderSpec> {
        let path = self.embedder();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Embedding rows of `field` keyed by record id.
    pub fn read_field_vectors(&self, field: SearchField) -> Result<IdMatrix> {
        let matrix = read_embeddings(&self.embeddings(field))?;
        let path = self.embedding_ids(field);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let ids: Vec<u64> =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        IdMatrix::new(ids, matrix)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        std::io::Write::write_all(w, b"\n")
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub field: SearchField,
    pub rows: usize,
    pub dim: usize,
    pub path: PathBuf,
}

/// Embeds `field` of every searchable record. All fields of one directory
/// must share an embedder spec; a different spec is rejected.
pub fn embed_field(dir: &ArtifactDir, field: SearchField, spec: &EmbedderSpec) -> Result<EmbedSummary> {
    spec.validate()?;
    if let Ok(existing) = dir.read_embedder() {
        if &existing != spec {
            return Err(Error::Invalid(format!(
                "{} holds a different embedder spec; use a fresh artifact directory",
                dir.embedder().display()
            )));
        }
    }
    let records = dir.searchable_records()?;
    let texts: Vec<&str> = records.iter().map(|r| field.text_of(r)).collect();
    let matrix = if texts.is_empty() {
        crate::store::EmbeddingMatrix::empty(spec.dim)
    } else {
        embed_batch(spec, &texts)?
    };
    let ids: Vec<u64> = records.iter().map(|r| r.id).collect();
    let path = dir.embeddings(field);
    write_embeddings(&matrix, &path)?;
    write_json(&dir.embedding_ids(field), &ids)?;
    write_json(&dir.embedder(), spec)?;
    Ok(EmbedSummary {
        field,
        rows: matrix.count(),
        dim: matrix.dim(),
        path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub field: SearchField,
    pub vectors: usize,
    pub params: Option<IvfPqParams>,
    /// `None` when the field has too few rows to train PQ codebooks; the
    /// service then searches it by exact scan.
    pub path: Option<PathBuf>,
}

/// Trains and fills an IVFPQ index over the embeddings of `field`. `nlist`
/// shrinks to the row count when needed; fields with fewer than 256 rows
/// get no index file.
pub fn index_field(dir: &ArtifactDir, field: SearchField, params: IvfPqParams) -> Result<IndexSummary> {
    let vectors = dir.read_field_vectors(field)?;
    let n = vectors.ids().len();
    let path = dir.index(field);
    if n < CODEBOOK_SIZE {
        tracing::warn!(field = %field, n, "too few rows for PQ training; field will be searched exactly");
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        return Ok(IndexSummary {
            field,
            vectors: n,
            params: None,
            path: None,
        });
    }
    let mut params = params;
    params.nlist = params.nlist.min(n);
    params.nprobe = params.nprobe.min(params.nlist);
    params.validate(vectors.matrix().dim())?;
    let mut index = IvfPqIndex::train(params, vectors.matrix())?;
    index.add(vectors.ids(), vectors.matrix())?;
    save_index(&index, &path)?;
    Ok(IndexSummary {
        field,
        vectors: n,
        params: Some(params),
        path: Some(path),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutJob {
    pub layout: LayoutParams,
    pub grid_resolution: usize,
    pub k_anchors: usize,
    pub lod: LodParams,
    pub zoom: ZoomModel,
}

impl Default for LayoutJob {
    fn default() -> Self {
        Self {
            layout: LayoutParams::default(),
            grid_resolution: GRID_RESOLUTION,
            k_anchors: 32,
            lod: LodParams::default(),
            zoom: ZoomModel::default(),
        }
    }
}

/// Lays out the prompt embeddings and writes positions, grid, anchors and
/// LOD under `layout/`. Anchors are capped at the number of distinct
/// positions.
pub fn layout_field(dir: &ArtifactDir, job: &LayoutJob, labeler: &dyn TextGenerator) -> Result<LayoutArtifacts> {
    let vectors = dir.read_field_vectors(SearchField::Prompt)?;
    let records = dir.searchable_records()?;
    let by_id: std::collections::HashMap<u64, &PromptRecord> = records.iter().map(|r| (r.id, r)).collect();
    let rows: Vec<&PromptRecord> = vectors
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("embedding row for id {id} has no searchable record")))
        })
        .collect::<Result<_>>()?;

    let positions = layout(vectors.matrix(), &job.layout)?;
    let grid = density_grid(&positions, job.grid_resolution)?;
    let distinct: std::collections::HashSet<(u32, u32)> =
        positions.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
    let k = job.k_anchors.min(distinct.len());
    let anchors = if k == 0 {
        Vec::new()
    } else {
        let subjects: Vec<String> = rows.iter().map(|r| r.lineage.subject_caption.clone()).collect();
        place_labels(&positions, &subjects, k, labeler, job.layout.seed, &job.zoom)?
    };
    let has_image: Vec<bool> = rows.iter().map(|r| r.image_ref.is_some()).collect();
    let lod = assign_lod(&positions, &has_image, &job.lod)?;
    let artifacts = LayoutArtifacts {
        positions,
        grid,
        anchors,
        lod,
    };
    let out = dir.layout();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    artifacts.write(&out)?;
    write_json(&out.join("job.json"), job)?;
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run_pipeline, Fanout, GenerationConfig, TemplateMock};

    #[test]
    fn field_names() {
        assert_eq!(SearchField::parse("mood").unwrap(), SearchField::Annotation(AnnotationField::Mood));
        let err = SearchField::parse("colour").unwrap_err().to_string();
        assert!(err.contains("prompt") && err.contains("genre"));
    }

    #[test]
    fn small_corpus_end_to_end() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = GenerationConfig {
            categories: vec!["ocean life".into(), "city streets".into()],
            fanout: Fanout::new(2, 2, 3, 2, 2),
            dedup_enabled: false,
            ..Default::default()
        };
        run_pipeline(&cfg, tmp.path()).unwrap();
        let dir = ArtifactDir::new(tmp.path());
        let spec = EmbedderSpec::default();
        let e = embed_field(&dir, SearchField::Prompt, &spec).unwrap();
        assert_eq!(e.rows, 96);
        let other = EmbedderSpec { dim: 64, ..spec.clone() };
        assert!(embed_field(&dir, SearchField::Prompt, &other).is_err());
        let ix = index_field(&dir, SearchField::Prompt, IvfPqParams::default()).unwrap();
        assert!(ix.path.is_none());
        let job = LayoutJob {
            layout: LayoutParams { epochs: 30, ..Default::default() },
            k_anchors: 4,
            ..Default::default()
        };
        let a = layout_field(&dir, &job, &TemplateMock::new()).unwrap();
        assert_eq!(a.positions.len(), 96);
        assert_eq!(a.grid.total(), 96);
        assert_eq!(a.anchors.len(), 4);
        assert_eq!(LayoutArtifacts::read(&dir.layout()).unwrap(), a);
    }
}
