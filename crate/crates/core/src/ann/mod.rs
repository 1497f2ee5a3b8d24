//! Inverted-file product-quantization (IVFPQ) index.
//!
//! A coarse k-means quantizer routes each vector to one of `nlist` cells.
//! The residual (vector minus its cell centroid) is split into `m`
//! subvectors, each encoded as one byte against a 256-entry codebook.
//! Queries probe the `nprobe` closest cells and score codes with
//! per-subspace lookup tables (asymmetric distance computation).

pub mod distance;
mod io;
mod ivfpq;
pub mod kmeans;

pub use io::{load_index, save_index, INDEX_MAGIC, INDEX_VERSION};
pub use ivfpq::{brute_force_knn, IdMatrix, IvfPqIndex, IvfPqParams, SearchHit, VectorLookup, CODEBOOK_SIZE, DEFAULT_K};
