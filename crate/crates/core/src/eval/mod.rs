//! Simulation stages, metrics and the end-to-end pipeline.

pub mod heatmap;
mod metrics;
pub mod pipeline;
pub mod stages;

pub use heatmap::emit_heatmap;
pub use metrics::*;
pub use pipeline::{run_pipeline, Manifest, PipelineConfig};
