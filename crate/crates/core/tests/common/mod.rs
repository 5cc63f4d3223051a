//! Fixtures shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use teglo::autodiff::{
    check_gradients, lipschitz_penalty, Activation, GradCheck, LipschitzLinear, Matrix, Mlp,
    ParamStore, Tape,
};
use teglo::camera::Camera;
use teglo::correspondence::{
    stage2_loss, CorrespondenceConfig, CorrespondenceModel, Stage2Mode, Stage2Targets,
};
use teglo::field::{
    sample_rays, stage1_loss, FieldConfig, LossWeights, RenderSettings, Stage1Model,
};
use teglo::Result;

pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so entries whose gradient is
/// at the level of central-difference noise compare absolutely.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_SAMPLES: usize = 200;

pub type LossFn = Box<dyn Fn(&ParamStore, bool) -> Result<(f64, Option<Vec<Matrix>>)>>;

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn finish(
    tape: &Tape<'_>,
    loss: teglo::autodiff::Var,
    store: &ParamStore,
    grad: bool,
) -> Result<(f64, Option<Vec<Matrix>>)> {
    let value = tape.value(loss).item();
    let grads = if grad {
        Some(tape.backward(loss)?.dense(store))
    } else {
        None
    };
    Ok((value, grads))
}

/// Lipschitz layers start with their largest row exactly on the clipping
/// kink, where a central difference averages the two branches. Pull each
/// bound below it so both branches are checked away from the kink.
pub fn pull_bounds_off_kink(store: &mut ParamStore, layers: &[LipschitzLinear]) {
    for layer in layers {
        let w = store.get(layer.weight);
        let max_row = (0..w.rows())
            .map(|r| w.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let bound: f64 = 0.8 * max_row;
        *store.get_mut(layer.c) = Matrix::scalar(bound.exp_m1().ln());
    }
}

/// Plain MLP with softplus hidden units and a sigmoid head under a squared
/// error.
pub fn mlp_case() -> (ParamStore, LossFn) {
    let mut rng = teglo::rng_for(1, 0);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "mlp",
        &[3, 16, 16, 4],
        Activation::Softplus,
        Activation::Sigmoid,
        false,
        &mut rng,
    )
    .unwrap();
    let x = random_matrix(8, 3, 1.0, &mut rng);
    let target = uniform_matrix(8, 4, 0.0, 1.0, &mut rng);
    let f = move |s: &ParamStore, grad: bool| {
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let y = mlp.forward(&mut tape, s, xv)?;
        let t = tape.constant(&target);
        let d = tape.sub(y, t)?;
        let sq = tape.square(d);
        let loss = tape.sum(sq);
        finish(&tape, loss, s, grad)
    };
    (store, Box::new(f))
}

/// Lipschitz-normalized MLP plus its `Π softplus(c)` penalty.
pub fn lipschitz_case() -> (ParamStore, LossFn) {
    let mut rng = teglo::rng_for(1, 1);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "lip",
        &[3, 12, 12, 2],
        Activation::Softplus,
        Activation::None,
        true,
        &mut rng,
    )
    .unwrap();
    pull_bounds_off_kink(&mut store, &mlp.lipschitz_layers());
    let x = random_matrix(10, 3, 1.0, &mut rng);
    let r = random_matrix(10, 2, 1.0, &mut rng);
    let f = move |s: &ParamStore, grad: bool| {
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let y = mlp.forward(&mut tape, s, xv)?;
        let rv = tape.constant(&r);
        let w = tape.mul(y, rv)?;
        let data = tape.sum(w);
        let pen = lipschitz_penalty(&mut tape, s, &mlp.lipschitz_layers())?;
        let pen = tape.scale(pen, 0.1);
        let loss = tape.add(data, pen)?;
        finish(&tape, loss, s, grad)
    };
    (store, Box::new(f))
}

/// Tri-plane bilinear lookup, differentiated in both plane features and
/// query points.
pub fn triplane_case() -> (ParamStore, LossFn) {
    let mut rng = teglo::rng_for(1, 2);
    let (res, ch) = (6, 6);
    let mut store = ParamStore::new();
    let planes = store
        .insert(
            "planes",
            random_matrix(1, 3 * res * res * ch, 1.0, &mut rng),
        )
        .unwrap();
    let points = store
        .insert("points", uniform_matrix(24, 3, -0.95, 0.95, &mut rng))
        .unwrap();
    let r = random_matrix(24, ch, 1.0, &mut rng);
    let f = move |s: &ParamStore, grad: bool| {
        let mut tape = Tape::new();
        let pv = tape.param(s, planes);
        let xv = tape.param(s, points);
        let (feat, _) = tape.triplane(pv, xv, res, ch)?;
        let rv = tape.constant(&r);
        let w = tape.mul(feat, rv)?;
        let loss = tape.sum(w);
        finish(&tape, loss, s, grad)
    };
    (store, Box::new(f))
}

/// Latent → tri-planes → decoder → quadrature → L1 photometric loss. The
/// latent is a parameter named `latent`.
pub fn render_loss_case() -> (ParamStore, LossFn) {
    let mut rng = teglo::rng_for(1, 3);
    let config = FieldConfig {
        latent_dim: 8,
        resolution: 8,
        channels: 4,
        rank: 4,
        generator_hidden: 16,
        decoder_hidden: 16,
        decoder_activation: Activation::Softplus,
        latent_proj: 4,
        view_dependent: true,
        camera_res: 16,
        basis_init: 0.5,
    };
    let model = Stage1Model::new(config, 1, &mut rng).unwrap();
    let mut store = model.store.clone();
    let latent = store
        .insert("latent", random_matrix(1, 8, 1.0, &mut rng))
        .unwrap();
    let camera = Camera::orbit(20.0, 10.0, 2.7, (8, 8), 40.0).unwrap();
    let coords: Vec<(usize, usize)> = (0..16).map(|i| (2 + i % 4, 2 + i / 4)).collect();
    let settings = RenderSettings::new(12, 0.0, 6.0);
    let rays = camera
        .generate_rays(&coords, settings.near, settings.far)
        .unwrap();
    let sampled = sample_rays(&rays, &settings, None::<&mut teglo::SeededRng>, true);
    let layout = Arc::new(sampled.layout.clone());
    let gt = uniform_matrix(16, 3, 0.0, 1.0, &mut rng);
    let f = move |s: &ParamStore, grad: bool| {
        let mut tape = Tape::new();
        let lat = tape.param(s, latent);
        let planes = model.planes(&mut tape, s, lat)?;
        let pts = tape.constant(&sampled.points);
        let dirs = tape.constant(&sampled.dirs);
        let (sigma, rgb) = model.decode(&mut tape, s, planes, lat, pts, Some(dirs))?;
        let comp = tape.composite(sigma, rgb, layout.clone())?;
        let pred = tape.slice_cols(comp, 0, 3)?;
        let loss = stage1_loss(
            &mut tape,
            pred,
            &gt,
            None,
            None,
            &LossWeights {
                rgb: 1.0,
                camera: 0.0,
                multiscale: 0.0,
            },
        )?;
        finish(&tape, loss, s, grad)
    };
    (store, Box::new(f))
}

/// Names of parameters the render loss actually depends on.
pub fn render_loss_params(name: &str) -> bool {
    !name.starts_with("camera_predictor")
}

/// Latent map, Lipschitz correspondence, basis decomposition and the full
/// Stage-2 objective with its penalty.
pub fn stage2_loss_case() -> (ParamStore, LossFn) {
    let mut rng = teglo::rng_for(1, 4);
    let config = CorrespondenceConfig {
        latent_dim: 6,
        shape_dim: 4,
        n_basis: 3,
        latent_width: 12,
        correspond_layers: 3,
        correspond_width: 12,
        basis_layers: 3,
        basis_width: 12,
    };
    let model = CorrespondenceModel::new(config, &mut rng).unwrap();
    let mut store = model.store.clone();
    pull_bounds_off_kink(&mut store, &model.correspond.lipschitz_layers());
    let latent = random_matrix(1, 6, 1.0, &mut rng);
    let points = uniform_matrix(12, 3, -0.8, 0.8, &mut rng);
    let targets = Stage2Targets {
        points: points.clone(),
        normals: Some(random_matrix(12, 3, 0.6, &mut rng)),
        rgb: Some(uniform_matrix(12, 3, 0.0, 1.0, &mut rng)),
    };
    let f = move |s: &ParamStore, grad: bool| {
        let mut tape = Tape::new();
        let lat = tape.constant(&latent);
        let pts = tape.constant(&points);
        let fwd = model.forward(&mut tape, s, lat, pts)?;
        let pen = model.penalty(&mut tape, s)?;
        let loss = stage2_loss(
            &mut tape,
            fwd.decomposed,
            &targets,
            Stage2Mode::Full,
            Some((pen, 0.05)),
        )?;
        finish(&tape, loss, s, grad)
    };
    (store, Box::new(f))
}

/// Every gradient case by name, with the parameter filter it uses.
pub fn gradient_cases() -> Vec<(&'static str, ParamStore, LossFn, fn(&str) -> bool)> {
    fn all(_: &str) -> bool {
        true
    }
    let mut out = Vec::new();
    for (name, make, filter) in [
        (
            "mlp",
            mlp_case as fn() -> (ParamStore, LossFn),
            all as fn(&str) -> bool,
        ),
        ("lipschitz_layer", lipschitz_case, all),
        ("triplane_sample", triplane_case, all),
        ("render_loss", render_loss_case, render_loss_params),
        ("stage2_loss", stage2_loss_case, all),
    ] {
        let (store, f) = make();
        out.push((name, store, f, filter));
    }
    out
}

pub fn run_gradient_case(
    store: &ParamStore,
    f: &LossFn,
    filter: fn(&str) -> bool,
    seed: u64,
) -> GradCheck {
    check_gradients(
        store,
        FD_SAMPLES,
        FD_STEP,
        FD_FLOOR,
        &mut teglo::rng_for(seed, 9),
        &filter,
        f,
    )
    .unwrap()
}

/// An even smaller pipeline than the smoke preset, for layout and
/// determinism checks.
pub fn tiny_config(seed: u64) -> teglo::pipeline::PipelineConfig {
    let mut c = teglo::pipeline::PipelineConfig::smoke();
    c.dataset.n_objects = 2;
    c.dataset.resolution = 16;
    c.stage1.steps = 40;
    c.stage2.steps = 30;
    c.render = RenderSettings::new(16, 0.0, 6.0);
    c.synthesis.highres = 32;
    c.inversion.steps = 5;
    c.with_seed(seed)
}

/// Every file under `root` with its bytes, sorted by relative path.
/// Timings are wall-clock and excluded.
pub fn snapshot(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &std::path::Path, root: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                if rel != "timings.json" {
                    out.push((rel, std::fs::read(&path).unwrap()));
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}
