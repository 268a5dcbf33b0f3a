//! Dataset ingestion, persistence, sampling, image export and the stage
//! runner behind the command-line tool.

pub mod checkpoint;
pub mod config;
pub mod grid;
pub mod mnist;
pub mod models;
pub mod sampling;
pub mod stages;

pub use checkpoint::{ModelCheckpoint, ModelKind, StoredTensor};
pub use config::{PipelineConfig, SampleSource};
pub use grid::{export_grid, ImageGrid};
pub use mnist::ingest_mnist;
pub use sampling::{sample_images, sample_latent, visualization_matrix, LatentSampler};
pub use stages::{run_stage, Stage};
