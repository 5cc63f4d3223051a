//! Canonical texture mapping on top of a latent-conditioned tri-plane
//! radiance field.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`autodiff`]: dense matrices, a reverse-mode tape, MLP and Lipschitz
//!   layers, Adam.
//! - [`camera`]: pinhole cameras, rays, projection and back-projection.
//! - [`field`]: the tri-plane radiance field, volume rendering, surface
//!   normals, the camera predictor and auto-decoder training.
//! - [`correspondence`]: the dense-correspondence networks mapping surface
//!   points to a 2D canonical space.
//! - [`texture`]: the K-d tree texture store and inverse-distance natural
//!   neighbor interpolation.
//! - [`synthetic`]: procedural scenes with analytic answers.
//! - [`pipeline`]: dataset rendering, view synthesis, tiling, metrics and
//!   end-to-end orchestration.
//!
//! Runnable walkthroughs of each capability live under `examples/`.

pub mod autodiff;
pub mod camera;
pub mod correspondence;
pub mod error;
pub mod field;
pub mod image;
pub mod pipeline;
pub mod synthetic;
pub mod texture;

pub use error::{Error, Result};

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Build a [`SeededRng`] from a seed and a stream tag so independent stages
/// draw from disjoint streams.
pub fn rng_for(seed: u64, stream: u64) -> SeededRng {
    use rand::SeedableRng;
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub type Vec3 = nalgebra::Vector3<f64>;
