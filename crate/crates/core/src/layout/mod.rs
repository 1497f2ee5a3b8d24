//! 2D map construction: neighbor-embedding layout, density grid, label
//! anchors, level-of-detail assignment and the zoom model tying them together.

mod artifacts;
mod grid;
mod knn;
mod labels;
mod lod;
mod umap;
mod zoom;

pub use artifacts::{LayoutArtifacts, ANCHORS_FILE, GRID_FILE, LOD_FILE, POSITIONS_FILE};
pub use grid::{density_grid, read_grid, write_grid, Bounds, DensityGrid, GRID_MAGIC, GRID_RESOLUTION, GRID_VERSION};
pub use knn::{knn_graph, KnnGraph, EXACT_KNN_LIMIT};
pub use labels::{place_labels, LabelAnchor, LABEL_NEIGHBORS};
pub use lod::{assign_lod, LodAssignment, LodParams};
pub use umap::{fit_ab, layout, layout_rows, LayoutParams};
pub use zoom::{render_density_tile, TileRect, ZoomModel, TILE_SIZE};
