//! Core data model for image-based table structure recognition.
//!
//! A table is described by its logical structure (rows of cells with
//! row/column spans, see [`TableGrid`]) and its physical structure (the
//! content bounding box of every non-empty cell). This crate provides:
//!
//! - [`grid`]: the canonical table model and the expanded cell matrix,
//! - [`tokens`]: the merged-label HTML token vocabulary and (de)tokenization,
//! - [`quant`]: coordinate quantization into integer bins,
//! - [`datagen`]: a seeded synthetic table renderer with exact ground truth,
//! - [`dataset`]: the JSONL dataset format,
//! - [`postproc`]: text-line to cell matching and HTML assembly,
//! - [`metrics`]: TEDS / S-TEDS, cell adjacency relations, detection AP and GriTS.

pub mod datagen;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod postproc;
pub mod quant;
pub mod tokens;

pub use error::{Error, Result};
pub use grid::{BBox, Cell, CellMatrix, TableGrid};
pub use quant::QuantizedBox;
pub use tokens::{Token, TokenSeq, Vocab};
