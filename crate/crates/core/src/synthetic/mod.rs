//! Analytic scenes with known geometry, texture and correspondences.

pub mod dataset;
pub mod oracle;
pub mod scene;

pub use dataset::{
    make_dataset, random_shapes, random_texture, DatasetConfig, SyntheticDataset, SyntheticObject,
};
pub use oracle::{oracle_render, OracleView};
pub use scene::{
    direction_angles, Hit, Pattern, Shape, SurfaceId, SyntheticScene, TextureFn, DEFAULT_BETA,
};
