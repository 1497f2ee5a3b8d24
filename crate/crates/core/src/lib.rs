//! Core engine for building a browsable semantic map of text-to-image prompts.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`store`]: record model and on-disk formats (JSONL corpus, binary
//!   embedding matrices, key-value blob store).
//! - [`embed`]: text to vector backends.
//! - [`ann`]: inverted-file product-quantization index with k-means training.
//! - [`dedup`] and [`stats`]: near-duplicate removal, diversity curves and
//!   prompt length statistics.
//! - [`pipeline`]: recursive concept expansion that synthesizes the corpus.
//! - [`layout`]: 2D map layout, density grid, labels and level of detail.
//!
//! Data-parallel inner loops go through [`parallel`], which uses rayon when
//! the `parallel` feature is enabled and runs sequentially otherwise. Every
//! parallel path produces the same output as the sequential one.

pub mod ann;
pub mod artifacts;
pub mod dedup;
pub mod embed;
pub mod error;
pub mod hash;
pub mod images;
pub mod layout;
pub mod parallel;
pub mod pipeline;
pub mod remote;
pub mod stats;
pub mod store;

pub use error::{Error, Result};
