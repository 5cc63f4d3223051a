//! Latent-conditioned tri-plane radiance field.
//!
//! [`render`] holds the quadrature renderer, generic over any
//! [`RadianceField`]; [`model`] the generator, decoder and latent table;
//! [`train`] the auto-decoder loop and single-image inversion.

pub mod model;
pub mod predictor;
pub mod render;
pub mod train;

pub use model::{Decoder, FieldConfig, FieldInstance, LatentTable, Stage1Model, TriPlaneGenerator};
pub use predictor::{CameraPredictor, Conv3x3, CAMERA_PARAMS};
pub use render::{
    render_normals, render_pixels, render_ray, render_rays, render_view, sample_rays,
    sample_weights, stratified_samples, FieldSamples, PixelSample, RadianceField, RayRender,
    RenderSettings, RenderedView, DEGENERATE_NORMAL, FOREGROUND_THRESHOLD,
};
pub use train::{
    continue_stage1, invert_image, stage1_loss, train_stage1, CameraTerm, Inversion,
    InversionConfig, LossWeights, Stage1Config, TrainReport, TrainingView,
};
