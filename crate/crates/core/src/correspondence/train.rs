use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{CorrespondenceConfig, CorrespondenceModel, NORMAL, POINT, RGB};
use crate::autodiff::{exponential_lr, AdamConfig, AdamState, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::field::RenderedView;
use crate::Vec3;

/// Which reconstruction terms drive Stage 2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Mode {
    /// Color, normal and point reconstruction.
    #[default]
    Full,
    /// Point reconstruction only.
    #[serde(alias = "coord-only")]
    CoordOnly,
}

impl std::str::FromStr for Stage2Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Stage2Mode::Full),
            "coord-only" | "coord_only" => Ok(Stage2Mode::CoordOnly),
            other => Err(Error::Config(format!("unknown stage-2 mode {other:?}"))),
        }
    }
}

/// Five views of one object with the object's Stage-1 latent.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Object {
    pub latent: Vec<f64>,
    pub views: Vec<RenderedView>,
}

/// Foreground records of one object, gathered from all its views.
#[derive(Clone, Debug, Default, PartialEq)]
struct Records {
    points: Vec<[f64; 3]>,
    normals: Vec<[f64; 3]>,
    rgb: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Dataset {
    pub objects: Vec<Stage2Object>,
    records: Vec<Records>,
}

impl Stage2Dataset {
    /// Gathers per-pixel records where opacity exceeds the foreground
    /// threshold.
    pub fn new(objects: Vec<Stage2Object>) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::Contract(
                "stage-2 dataset needs at least one object".into(),
            ));
        }
        let dim = objects[0].latent.len();
        let mut records = Vec::with_capacity(objects.len());
        for (i, o) in objects.iter().enumerate() {
            if o.latent.len() != dim || o.latent.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!(
                    "object {i} has an inconsistent latent"
                )));
            }
            let mut r = Records::default();
            for v in &o.views {
                for px in v.foreground() {
                    let take = |img: &crate::image::Image| {
                        let p = img.at(px);
                        [p[0], p[1], p[2]]
                    };
                    r.points.push(take(&v.points));
                    r.normals.push(take(&v.normals));
                    r.rgb.push(take(&v.rgb));
                }
            }
            if r.points.is_empty() {
                return Err(Error::Contract(format!(
                    "object {i} has no foreground pixels"
                )));
            }
            records.push(r);
        }
        Ok(Stage2Dataset { objects, records })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn foreground_count(&self, object: usize) -> usize {
        self.records[object].points.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.objects[0].latent.len()
    }
}

/// Ground truth for one batch. Color and normals are absent in
/// coordinate-only training.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Targets {
    pub points: Matrix,
    pub normals: Option<Matrix>,
    pub rgb: Option<Matrix>,
}

impl Stage2Targets {
    fn gather(records: &[[f64; 3]], idx: &[usize]) -> Matrix {
        let data = idx.iter().flat_map(|&i| records[i]).collect();
        Matrix::from_vec(idx.len(), 3, data).expect("records have three columns")
    }
}

/// Mean over rows of the squared Euclidean error.
fn mean_sq_norm(tape: &mut Tape<'_>, pred: Var, gt: &Matrix) -> Result<Var> {
    let n = gt.rows().max(1);
    let g = tape.constant(gt.clone());
    let d = tape.sub(pred, g)?;
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// `mean‖Δrgb‖² + mean‖Δnormal‖² + mean‖Δpoint‖²` (full) or the point term
/// alone (coordinate-only), plus `λ·penalty` when a penalty is given.
pub fn stage2_loss<'a>(
    tape: &mut Tape<'a>,
    decomposed: Var,
    targets: &Stage2Targets,
    mode: Stage2Mode,
    penalty: Option<(Var, f64)>,
) -> Result<Var> {
    let (n, c) = tape.value(decomposed).shape();
    if c != super::model::BASIS_CHANNELS || n != targets.points.rows() {
        return Err(Error::shape(
            "stage2_loss",
            format!("prediction {n}x{c} for {} targets", targets.points.rows()),
        ));
    }
    let p = tape.slice_cols(decomposed, POINT.start, 3)?;
    let mut loss = mean_sq_norm(tape, p, &targets.points)?;
    if mode == Stage2Mode::Full {
        let (normals, rgb) = match (&targets.normals, &targets.rgb) {
            (Some(nm), Some(rgb)) => (nm, rgb),
            _ => {
                return Err(Error::Contract(
                    "full stage-2 loss needs rgb and normal targets".into(),
                ))
            }
        };
        let r = tape.slice_cols(decomposed, RGB.start, 3)?;
        let lr = mean_sq_norm(tape, r, rgb)?;
        let s = tape.slice_cols(decomposed, NORMAL.start, 3)?;
        let ls = mean_sq_norm(tape, s, normals)?;
        loss = tape.add(loss, lr)?;
        loss = tape.add(loss, ls)?;
    }
    if let Some((pen, weight)) = penalty {
        if weight != 0.0 {
            let w = tape.scale(pen, weight);
            loss = tape.add(loss, w)?;
        }
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub network: CorrespondenceConfig,
    pub mode: Stage2Mode,
    pub steps: usize,
    pub batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Weight of the Lipschitz penalty `Π softplus(c_l)`.
    pub lipschitz_weight: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            network: CorrespondenceConfig::default(),
            mode: Stage2Mode::Full,
            steps: 2000,
            batch: 512,
            lr_start: 1e-3,
            lr_end: 1e-4,
            lipschitz_weight: 1e-6,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("stage2.batch must be positive".into()));
        }
        for (name, v) in [
            ("lr_start", self.lr_start),
            ("lr_end", self.lr_end),
            ("lipschitz_weight", self.lipschitz_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("stage2.{name} = {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub losses: Vec<f64>,
}

fn batch_targets(records: &Records, idx: &[usize], mode: Stage2Mode) -> Stage2Targets {
    let full = mode == Stage2Mode::Full;
    Stage2Targets {
        points: Stage2Targets::gather(&records.points, idx),
        normals: full.then(|| Stage2Targets::gather(&records.normals, idx)),
        rgb: full.then(|| Stage2Targets::gather(&records.rgb, idx)),
    }
}

/// Train `L`, `M` and `C`; dataset latents are read but never changed.
pub fn train_stage2(
    data: &Stage2Dataset,
    config: &Stage2Config,
) -> Result<(CorrespondenceModel, Stage2Report)> {
    config.validate()?;
    if data.latent_dim() != config.network.latent_dim {
        return Err(Error::Config(format!(
            "stage2.network.latent_dim = {} but the dataset latents have {}",
            config.network.latent_dim,
            data.latent_dim()
        )));
    }
    let mut init_rng = crate::rng_for(config.seed, 11);
    let model = CorrespondenceModel::new(config.network, &mut init_rng)?;
    continue_stage2(model, data, config)
}

/// Continue training an existing model for `config.steps` steps.
pub fn continue_stage2(
    mut model: CorrespondenceModel,
    data: &Stage2Dataset,
    config: &Stage2Config,
) -> Result<(CorrespondenceModel, Stage2Report)> {
    let mut rng = crate::rng_for(config.seed, 12);
    let mut adam = AdamState::new(&model.store, config.adam);
    let mut report = Stage2Report::default();
    for step in 0..config.steps {
        let obj = rng.gen_range(0..data.len());
        let records = &data.records[obj];
        let idx: Vec<usize> = (0..config.batch)
            .map(|_| rng.gen_range(0..records.points.len()))
            .collect();
        let targets = batch_targets(records, &idx, config.mode);
        let lr = exponential_lr(config.lr_start, config.lr_end, step, config.steps);

        let store = &model.store;
        let mut tape = Tape::new();
        let latent = tape.constant(Matrix::row_vector(data.objects[obj].latent.clone()));
        let points = tape.constant(targets.points.clone());
        let fwd = model.forward(&mut tape, store, latent, points)?;
        let penalty = model.penalty(&mut tape, store)?;
        let loss = stage2_loss(
            &mut tape,
            fwd.decomposed,
            &targets,
            config.mode,
            Some((penalty, config.lipschitz_weight)),
        )?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                stage: "stage2",
                step,
                reason: format!("loss is {value}"),
            });
        }
        let grads = tape.backward(loss)?.dense(store);
        adam.step(&mut model.store, &grads, lr)
            .map_err(|e| match e {
                Error::Diverged { stage, reason, .. } => Error::Diverged {
                    stage,
                    step,
                    reason,
                },
                other => other,
            })?;
        report.losses.push(value);
    }
    Ok((model, report))
}

/// Reconstruction quality of a trained model on every foreground record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Fit {
    pub point_mse: f64,
    pub normal_mse: f64,
    pub rgb_psnr: f64,
}

pub fn evaluate_stage2(model: &CorrespondenceModel, data: &Stage2Dataset) -> Result<Stage2Fit> {
    let (mut sp, mut sn, mut sr, mut count) = (0.0, 0.0, 0.0, 0usize);
    for (o, rec) in data.objects.iter().zip(&data.records) {
        let (code, coeffs) = model.latent_map(&o.latent)?;
        let pts: Vec<Vec3> = rec
            .points
            .iter()
            .map(|p| Vec3::new(p[0], p[1], p[2]))
            .collect();
        let uv = model.correspond(&pts, &code)?;
        let basis = model.basis_eval(&uv)?;
        for i in 0..pts.len() {
            let b = Matrix::from_vec(coeffs.rows(), coeffs.cols(), basis.row(i).to_vec())?;
            let d = super::model::decompose(&b, &coeffs)?;
            for c in 0..3 {
                sr += (d[RGB.start + c] - rec.rgb[i][c]).powi(2);
                sn += (d[NORMAL.start + c] - rec.normals[i][c]).powi(2);
                sp += (d[POINT.start + c] - rec.points[i][c]).powi(2);
            }
        }
        count += pts.len();
    }
    let n = (3 * count).max(1) as f64;
    let rgb_mse = sr / n;
    Ok(Stage2Fit {
        point_mse: sp / n,
        normal_mse: sn / n,
        rgb_psnr: crate::pipeline::psnr_from_mse(rgb_mse),
    })
}
