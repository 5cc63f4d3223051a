use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{FieldConfig, Stage1Model};
use super::render::{sample_rays, RenderSettings};
use crate::autodiff::{
    exponential_lr, AdamConfig, AdamState, Matrix, ParamStore, RowAdam, Tape, Var,
};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::SeededRng;

/// One posed training image.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingView {
    pub image: Image,
    pub camera: Camera,
}

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub camera: f64,
    /// Multi-scale L1 over a square patch; 0 disables it.
    pub multiscale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rgb: 1.0,
            camera: 1.0,
            multiscale: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub field: FieldConfig,
    pub render: RenderSettings,
    pub steps: usize,
    pub rays_per_step: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Initial latent learning rate; decays with the same schedule.
    pub latent_lr: f64,
    pub loss: LossWeights,
    /// Patch side used when the multi-scale term is active.
    pub patch: usize,
    /// Samples per ray for the predictor's low-resolution render.
    pub camera_samples: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            field: FieldConfig::default(),
            render: RenderSettings::new(32, 0.0, 6.0),
            steps: 2000,
            rays_per_step: 512,
            lr_start: 5e-4,
            lr_end: 1e-4,
            latent_lr: 1e-2,
            loss: LossWeights::default(),
            patch: 16,
            camera_samples: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if self.render.n_samples < 2
            || !(self.render.near >= 0.0 && self.render.near < self.render.far)
        {
            return Err(Error::Config(
                "stage1.render needs n_samples ≥ 2 and 0 ≤ near < far".into(),
            ));
        }
        if self.rays_per_step == 0 {
            return Err(Error::Config(
                "stage1.rays_per_step must be positive".into(),
            ));
        }
        if self.loss.multiscale > 0.0 && (self.patch < 4 || self.patch % 4 != 0) {
            return Err(Error::Config(
                "stage1.patch must be a multiple of 4 for the multi-scale loss".into(),
            ));
        }
        if self.loss.camera > 0.0 && self.camera_samples < 2 {
            return Err(Error::Config(
                "stage1.camera_samples must be at least 2".into(),
            ));
        }
        for (name, v) in [
            ("lr_start", self.lr_start),
            ("lr_end", self.lr_end),
            ("latent_lr", self.latent_lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("stage1.{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// `(s/2)² × s²` matrix averaging 2×2 blocks of an `s×s` patch.
fn pool_matrix(side: usize) -> Matrix {
    let half = side / 2;
    let mut m = Matrix::zeros(half * half, side * side);
    for y in 0..half {
        for x in 0..half {
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                m.set(y * half + x, (2 * y + dy) * side + 2 * x + dx, 0.25);
            }
        }
    }
    m
}

fn mean_abs_diff<'a>(tape: &mut Tape<'a>, pred: Var, gt: Var) -> Result<Var> {
    let d = tape.sub(pred, gt)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Camera-prediction part of the loss.
pub struct CameraTerm<'t> {
    pub predicted: Var,
    pub target: &'t [f64; 25],
}

/// `λ_rgb·mean|Δrgb| + λ_cam·mean|Δcam| + λ_ms·Σ_levels mean|Δ pool^l(rgb)|`.
///
/// When `patch_side` is given, `rendered` and `gt` hold a square patch in
/// row-major order and the multi-scale pyramid has three levels.
pub fn stage1_loss<'a>(
    tape: &mut Tape<'a>,
    rendered: Var,
    gt: &Matrix,
    camera: Option<CameraTerm<'_>>,
    patch_side: Option<usize>,
    weights: &LossWeights,
) -> Result<Var> {
    if tape.value(rendered).shape() != gt.shape() {
        return Err(Error::shape(
            "stage1_loss",
            format!(
                "rendered {:?} vs gt {:?}",
                tape.value(rendered).shape(),
                gt.shape()
            ),
        ));
    }
    let gt_var = tape.constant(gt.clone());
    let rgb = mean_abs_diff(tape, rendered, gt_var)?;
    let mut loss = tape.scale(rgb, weights.rgb);
    if let Some(CameraTerm { predicted, target }) = camera {
        if weights.camera != 0.0 {
            let t = tape.constant(Matrix::row_vector(target.to_vec()));
            let c = mean_abs_diff(tape, predicted, t)?;
            let c = tape.scale(c, weights.camera);
            loss = tape.add(loss, c)?;
        }
    }
    if let (Some(side), true) = (patch_side, weights.multiscale != 0.0) {
        if side * side != gt.rows() || side % 4 != 0 {
            return Err(Error::shape(
                "stage1_loss",
                format!("patch side {side} for {} pixels", gt.rows()),
            ));
        }
        let (mut p, mut g, mut s) = (rendered, gt_var, side);
        let mut ms = mean_abs_diff(tape, p, g)?;
        for _ in 0..2 {
            let pool = tape.constant(pool_matrix(s));
            p = tape.matmul(pool, p)?;
            g = tape.matmul(pool, g)?;
            s /= 2;
            let level = mean_abs_diff(tape, p, g)?;
            ms = tape.add(ms, level)?;
        }
        let ms = tape.scale(ms, weights.multiscale);
        loss = tape.add(loss, ms)?;
    }
    Ok(loss)
}

/// Pixels chosen for one step: random pixels, or a random square patch
/// when the multi-scale term is on.
fn sample_pixels(
    view: &TrainingView,
    cfg: &Stage1Config,
    rng: &mut SeededRng,
) -> (Vec<usize>, Option<usize>) {
    let (w, h) = (view.image.width, view.image.height);
    if cfg.loss.multiscale > 0.0 {
        let side = cfg.patch.min(w).min(h) / 4 * 4;
        let x0 = rng.gen_range(0..=w - side);
        let y0 = rng.gen_range(0..=h - side);
        let px = (0..side * side)
            .map(|i| (y0 + i / side) * w + x0 + i % side)
            .collect();
        (px, Some(side))
    } else {
        let n = w * h;
        (
            (0..cfg.rays_per_step)
                .map(|_| rng.gen_range(0..n))
                .collect(),
            None,
        )
    }
}

/// Volume render `pixels` of `camera` on the tape; returns `n×3` rgb.
fn render_on_tape<'a>(
    tape: &mut Tape<'a>,
    model: &Stage1Model,
    store: &'a ParamStore,
    planes: Var,
    latent: Var,
    camera: &Camera,
    pixels: &[usize],
    settings: &RenderSettings,
    rng: &mut SeededRng,
) -> Result<Var> {
    let coords: Vec<(usize, usize)> = pixels
        .iter()
        .map(|&i| (i % camera.width, i / camera.width))
        .collect();
    let rays = camera.generate_rays(&coords, settings.near, settings.far)?;
    let sampled = sample_rays(&rays, settings, Some(rng), true);
    let points = tape.constant(sampled.points);
    let dirs = tape.constant(sampled.dirs);
    let (sigma, rgb) = model.decode(tape, store, planes, latent, points, Some(dirs))?;
    let comp = tape.composite(sigma, rgb, Arc::new(sampled.layout))?;
    tape.slice_cols(comp, 0, 3)
}

struct StepOutput {
    loss: f64,
    network: Option<Vec<Matrix>>,
    latent: Vec<f64>,
}

/// Loss and gradients for one object and latent.
fn step_gradients(
    model: &Stage1Model,
    view: &TrainingView,
    latent: &[f64],
    cfg: &Stage1Config,
    rng: &mut SeededRng,
    want_network: bool,
) -> Result<StepOutput> {
    let store = &model.store;
    let mut tape = Tape::new();
    let lat = tape.input(Matrix::row_vector(latent.to_vec()));
    let planes = model.planes(&mut tape, store, lat)?;

    let (pixels, patch) = sample_pixels(view, cfg, rng);
    let rendered = render_on_tape(
        &mut tape,
        model,
        store,
        planes,
        lat,
        &view.camera,
        &pixels,
        &cfg.render,
        rng,
    )?;
    let mut gt = Matrix::zeros(pixels.len(), 3);
    for (r, &p) in pixels.iter().enumerate() {
        gt.row_mut(r).copy_from_slice(view.image.at(p));
    }

    let target = view.camera.flatten();
    let camera = if cfg.loss.camera != 0.0 {
        let res = model.config.camera_res;
        let small = view.camera.rescaled(res, res)?;
        let settings = RenderSettings {
            n_samples: cfg.camera_samples,
            ..cfg.render
        };
        let all: Vec<usize> = (0..res * res).collect();
        let img = render_on_tape(
            &mut tape, model, store, planes, lat, &small, &all, &settings, rng,
        )?;
        let predicted = model.predictor.forward(&mut tape, store, img, res, res)?;
        Some(CameraTerm {
            predicted,
            target: &target,
        })
    } else {
        None
    };
    let loss = stage1_loss(&mut tape, rendered, &gt, camera, patch, &cfg.loss)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Diverged {
            stage: "stage1",
            step: 0,
            reason: format!("loss is {value}"),
        });
    }
    let grads = tape.backward(loss)?;
    let latent_grad = grads
        .wrt(lat)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; latent.len()]);
    Ok(StepOutput {
        loss: value,
        network: want_network.then(|| grads.dense(store)),
        latent: latent_grad,
    })
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Diverged { stage, reason, .. } => Error::Diverged {
            stage,
            step,
            reason,
        },
        other => other,
    }
}

/// Loss trace of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

/// Auto-decoder training: each step picks one object, renders a pixel
/// batch from its pose, and updates the networks plus that object's
/// latent row.
pub fn train_stage1(
    data: &[TrainingView],
    config: &Stage1Config,
    checkpoint: Option<(&Path, usize)>,
) -> Result<(Stage1Model, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Contract(
            "train_stage1 needs at least one image".into(),
        ));
    }
    let mut init_rng = crate::rng_for(config.seed, 1);
    let model = Stage1Model::new(config.field, data.len(), &mut init_rng)?;
    continue_stage1(model, data, config, checkpoint)
}

/// Continue training an existing model for `config.steps` steps.
pub fn continue_stage1(
    mut model: Stage1Model,
    data: &[TrainingView],
    config: &Stage1Config,
    checkpoint: Option<(&Path, usize)>,
) -> Result<(Stage1Model, TrainReport)> {
    if model.latents.len() != data.len() {
        return Err(Error::Contract(format!(
            "{} latent rows for {} images",
            model.latents.len(),
            data.len()
        )));
    }
    let mut rng = crate::rng_for(config.seed, 2);
    let mut adam = AdamState::new(&model.store, config.adam);
    let mut latent_adam = RowAdam::new(&model.latents.latents, config.adam);
    let mut report = TrainReport::default();
    for step in 0..config.steps {
        let obj = rng.gen_range(0..data.len());
        let lr = exponential_lr(config.lr_start, config.lr_end, step, config.steps);
        let latent_lr = if config.lr_start > 0.0 {
            config.latent_lr * lr / config.lr_start
        } else {
            config.latent_lr
        };
        let latent = model.latents.row(obj)?.to_vec();
        let out = step_gradients(&model, &data[obj], &latent, config, &mut rng, true)
            .map_err(|e| at_step(e, step))?;
        let grads = out.network.expect("network gradients requested");
        adam.step(&mut model.store, &grads, lr)
            .map_err(|e| at_step(e, step))?;
        latent_adam
            .step_row(&mut model.latents.latents, obj, &out.latent, latent_lr)
            .map_err(|e| at_step(e, step))?;
        report.losses.push(out.loss);
        if let Some((dir, every)) = checkpoint {
            if every > 0 && (step + 1) % every == 0 {
                model.save(&dir.join(format!("stage1_step{:06}.json", step + 1)))?;
            }
        }
    }
    Ok((model, report))
}

/// Settings for fitting a fresh latent to one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 300,
            lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    /// Latent with the lowest loss seen.
    pub latent: Vec<f64>,
    pub best_loss: f64,
    pub losses: Vec<f64>,
    /// Set when optimization stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Optimize a latent (initialized to the table mean) against the Stage-1
/// loss with all network weights frozen.
pub fn invert_image(
    model: &Stage1Model,
    target: &TrainingView,
    config: &Stage1Config,
    inversion: &InversionConfig,
) -> Result<Inversion> {
    let mut rng = crate::rng_for(inversion.seed, 3);
    let mut latent = Matrix::row_vector(model.latents.mean());
    let mut adam = RowAdam::new(&latent, config.adam);
    let mut best = (f64::INFINITY, latent.data().to_vec());
    let mut losses = Vec::with_capacity(inversion.steps);
    let mut diverged = None;
    for step in 0..inversion.steps {
        let current = latent.data().to_vec();
        let out = match step_gradients(model, target, &current, config, &mut rng, false) {
            Ok(o) => o,
            Err(Error::Diverged { reason, .. }) => {
                diverged = Some(format!("step {step}: {reason}"));
                break;
            }
            Err(e) => return Err(e),
        };
        losses.push(out.loss);
        if out.loss < best.0 {
            best = (out.loss, current);
        }
        if let Err(e) = adam.step_row(&mut latent, 0, &out.latent, inversion.lr) {
            diverged = Some(format!("step {step}: {e}"));
            break;
        }
    }
    if inversion.steps == 0 {
        best.1 = latent.data().to_vec();
    }
    Ok(Inversion {
        latent: best.1,
        best_loss: best.0,
        losses,
        diverged,
    })
}
