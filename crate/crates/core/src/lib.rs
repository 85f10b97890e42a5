//! Spatial transcriptomics expression prediction from spot embeddings over a
//! hierarchical spot graph.
//!
//! The stages are independent modules that can be driven one by one or through
//! [`pipeline::run_pipeline`].

pub mod clustering;
pub mod config;
pub mod cv;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod heatmap;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod smoothing;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
