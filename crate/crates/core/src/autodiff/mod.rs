//! Dense matrices with reverse-mode differentiation.
//!
//! Just enough machinery to train small MLPs, tri-plane feature grids, a
//! strided-conv camera predictor and Lipschitz-normalized layers, all in
//! double precision.

mod adam;
mod gradcheck;
mod layers;
mod matrix;
mod params;
mod tape;

pub use adam::{exponential_lr, AdamConfig, AdamState, RowAdam};
pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use layers::{glorot_uniform, lipschitz_penalty, Layer, Linear, LipschitzLinear, Mlp};
pub use matrix::Matrix;
pub use params::{ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tape::{Activation, CompositeLayout, Gradients, Tape, Var, DEPTH_OPACITY_FLOOR};

pub(crate) use tape::{
    composite_kernel, sigmoid_scalar, softplus_scalar, triplane_kernel, TriplaneMeta,
};

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    softplus_scalar(x)
}

pub fn sigmoid(x: f64) -> f64 {
    sigmoid_scalar(x)
}
