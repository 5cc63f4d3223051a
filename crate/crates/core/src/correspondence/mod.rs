//! Dense correspondences: a latent map to shape codes and basis
//! coefficients, a Lipschitz network from surface points to canonical
//! uv, and a basis network whose coefficient-weighted sum reconstructs
//! color, normal and position.

pub mod model;
pub mod train;

pub use model::{
    decompose, decompose_on_tape, CorrespondenceConfig, CorrespondenceModel, LatentMap, ObjectMap,
    Stage2Forward, BASIS_CHANNELS, NORMAL, POINT, RGB,
};
pub use train::{
    continue_stage2, evaluate_stage2, stage2_loss, train_stage2, Stage2Config, Stage2Dataset,
    Stage2Fit, Stage2Mode, Stage2Object, Stage2Report, Stage2Targets,
};
