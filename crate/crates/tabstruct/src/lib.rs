//! End-to-end table structure recognition from images.
//!
//! A convolutional encoder produces a stride-16 feature map. An HTML decoder
//! emits merged-label structure tokens; the hidden state behind every
//! non-empty-cell token seeds a coordinate decoder that classifies the
//! cell's four box coordinates, all cells of a batch in parallel. During
//! training, an InfoNCE term aligns each cell's decoder state with ROI
//! features pooled from its ground-truth box.
//!
//! Data generation, tokenization and metrics live in [`tabstruct_core`],
//! re-exported here as [`core`].

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
pub use tabstruct_core as core;
