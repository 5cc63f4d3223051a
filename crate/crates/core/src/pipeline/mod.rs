//! Orchestration: rendered datasets on disk, texture-based view synthesis,
//! tiled rendering, metrics and the end-to-end run.

pub mod alignment;
pub mod config;
pub mod layout;
pub mod metrics;
pub mod run;
pub mod synthesis;

pub use alignment::{correspondence_alignment, oracle_matches, AlignmentReport};
pub use config::{EvalConfig, PipelineConfig, Stage2Geometry, SynthesisConfig, TextureConfig};
pub use layout::{object_dir, read_json, write_json, RenderedDataset, RenderedObject};
pub use metrics::{color_histogram, histogram_emd, masked_mse, psnr, psnr_from_mse, PSNR_CAP};
pub use run::{
    configure_texture, edit_square, evaluate, extract_all_textures, extract_object_textures,
    five_poses, load_artifacts, load_dataset, oracle_dataset, render_dataset, rendered_for_stage1,
    run_end_to_end, save_dataset, stage2_dataset, train_stage1_on, train_stage2_on, write_metrics,
    AggregateMetrics, Metrics, ObjectMetrics, ObjectTextures, PoseMetric, RunArtifacts, Timings,
    TransferMetrics, Workspace, METRICS_NOTE,
};
pub use synthesis::{row_bands, synthesis_bytes, transfer, Synthesizer, PIXEL_BYTES, SAMPLE_BYTES};
