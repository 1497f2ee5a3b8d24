use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;

use atlas_core::ann::{brute_force_knn, load_index, IdMatrix, IvfPqIndex, SearchHit};
use atlas_core::artifacts::{ArtifactDir, SearchField};
use atlas_core::embed::{embed_batch, EmbedderSpec};
use atlas_core::layout::{Bounds, DensityGrid, LabelAnchor, LayoutArtifacts, LodAssignment, TileRect, ZoomModel};
use atlas_core::store::{FileKv, KvStore, MemKv, PromptRecord};
use atlas_core::{Error, Result};

pub struct FieldSearch {
    pub vectors: IdMatrix,
    /// `None` for fields too small to index; those are scanned exactly.
    pub index: Option<IvfPqIndex>,
}

impl FieldSearch {
    /// `exact` probes every cell and re-scores the whole field with exact
    /// distances, which matches brute force.
    pub fn search(&self, query: &[f32], k: usize, exact: bool) -> Result<Vec<SearchHit>> {
        match &self.index {
            None => Ok(brute_force_knn(query, &self.vectors, k)),
            Some(index) if exact => {
                let n = self.vectors.ids().len();
                index.search_exact_rerank_nprobe(query, k, n, index.params().nlist, &self.vectors)
            }
            Some(index) => index.search(query, k),
        }
    }
}

/// Layout artifacts re-keyed by record id.
pub struct MapView {
    pub ids: Vec<u64>,
    pub rows: HashMap<u64, usize>,
    pub positions: Vec<[f32; 2]>,
    pub lod: LodAssignment,
    pub anchors: Vec<LabelAnchor>,
    pub grid: DensityGrid,
    pub prefix: Vec<u64>,
    pub world: TileRect,
}

/// Everything one version serves. Immutable once built.
pub struct SnapshotData {
    pub root: Option<PathBuf>,
    pub records: Vec<PromptRecord>,
    pub by_id: HashMap<u64, usize>,
    pub embedder: Option<EmbedderSpec>,
    pub fields: HashMap<SearchField, FieldSearch>,
    pub map: Option<MapView>,
    pub zoom: ZoomModel,
    pub kv: Arc<dyn KvStore>,
}

pub struct Snapshot {
    pub version: u64,
    pub data: SnapshotData,
}

impl std::ops::Deref for Snapshot {
    type Target = SnapshotData;

    fn deref(&self) -> &SnapshotData {
        &self.data
    }
}

impl SnapshotData {
    /// A snapshot with no records, served before any artifacts are loaded.
    pub fn empty() -> Self {
        Self {
            root: None,
            records: Vec::new(),
            by_id: HashMap::new(),
            embedder: None,
            fields: HashMap::new(),
            map: None,
            zoom: ZoomModel::default(),
            kv: Arc::new(MemKv::new()),
        }
    }

    /// Loads an artifact directory. Only the corpus is required; missing
    /// embeddings, indexes or layout disable the endpoints that need them.
    pub fn load(root: &Path) -> Result<Self> {
        let dir = ArtifactDir::new(root);
        let records = dir.searchable_records()?;
        let by_id = records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let embedder = dir.embedder().exists().then(|| dir.read_embedder()).transpose()?;

        let mut fields = HashMap::new();
        for field in SearchField::ALL {
            if !dir.embeddings(field).exists() {
                continue;
            }
            let vectors = dir.read_field_vectors(field)?;
            let index_path = dir.index(field);
            let index = index_path.exists().then(|| load_index(&index_path)).transpose()?;
            if let Some(ix) = &index {
                if ix.dim() != vectors.matrix().dim() {
                    return Err(Error::Format(format!(
                        "{field} index has dim {}, embeddings have {}",
                        ix.dim(),
                        vectors.matrix().dim()
                    )));
                }
            }
            fields.insert(field, FieldSearch { vectors, index });
        }

        let zoom = ZoomModel::default();
        let map = if dir.layout().join(atlas_core::layout::POSITIONS_FILE).exists() {
            let art = LayoutArtifacts::read(&dir.layout())?;
            let ids = fields
                .get(&SearchField::Prompt)
                .map(|f| f.vectors.ids().to_vec())
                .ok_or_else(|| Error::Format("layout present without prompt embeddings".into()))?;
            Some(MapView::new(ids, art, &zoom)?)
        } else {
            None
        };

        let kv_dir = dir.kv();
        let kv: Arc<dyn KvStore> = if kv_dir.exists() {
            Arc::new(FileKv::open(&kv_dir)?)
        } else {
            Arc::new(MemKv::new())
        };

        Ok(Self {
            root: Some(root.to_path_buf()),
            records,
            by_id,
            embedder,
            fields,
            map,
            zoom,
            kv,
        })
    }

    pub fn record(&self, id: u64) -> Option<&PromptRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn embed_query(&self, text: &str) -> Result<Vec<f32>> {
        let spec = self
            .embedder
            .as_ref()
            .ok_or_else(|| Error::NotFound("snapshot has no embeddings".into()))?;
        Ok(embed_batch(spec, &[text])?.into_vec())
    }
}

impl MapView {
    pub fn new(ids: Vec<u64>, art: LayoutArtifacts, zoom: &ZoomModel) -> Result<Self> {
        if ids.len() != art.positions.len() {
            return Err(Error::Format(format!(
                "{} layout positions for {} prompt embeddings",
                art.positions.len(),
                ids.len()
            )));
        }
        let rows = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let prefix = art.grid.prefix_sums();
        let world = zoom.world(&art.grid.bounds);
        Ok(Self {
            ids,
            rows,
            positions: art.positions,
            lod: art.lod,
            anchors: art.anchors,
            grid: art.grid,
            prefix,
            world,
        })
    }

    pub fn bounds(&self) -> Bounds {
        self.grid.bounds
    }
}

/// The current snapshot behind an atomic pointer swap. Readers clone the
/// `Arc` once per request and keep using it even if a swap happens.
pub struct SnapshotStore {
    current: RwLock<Arc<Snapshot>>,
}

impl SnapshotStore {
    pub fn new(data: SnapshotData) -> Self {
        Self {
            current: RwLock::new(Arc::new(Snapshot { version: 1, data })),
        }
    }

    pub fn current(&self) -> Arc<Snapshot> {
        self.current.read().clone()
    }

    /// Installs `data` and returns its version, one above the previous.
    pub fn swap(&self, data: SnapshotData) -> u64 {
        let mut cur = self.current.write();
        let version = cur.version + 1;
        *cur = Arc::new(Snapshot { version, data });
        version
    }
}
