use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::predictor::CameraPredictor;
use super::render::{render_view, FieldSamples, RadianceField, RenderSettings, RenderedView};
use crate::autodiff::{
    sigmoid, softplus, triplane_kernel, Activation, Linear, Matrix, Mlp, ParamId, ParamStore, Tape,
    TriplaneMeta, Var,
};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::Vec3;

/// Network sizes for the latent-conditioned tri-plane field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// Latent width `D`.
    pub latent_dim: usize,
    /// Plane resolution `R`.
    pub resolution: usize,
    /// Feature channels `k`.
    pub channels: usize,
    /// Rank of the latent → plane factorization.
    pub rank: usize,
    pub generator_hidden: usize,
    pub decoder_hidden: usize,
    /// Hidden activation of the decoder.
    pub decoder_activation: Activation,
    /// Width the latent is projected to before entering the decoder.
    pub latent_proj: usize,
    /// Append the view direction to the decoder input.
    pub view_dependent: bool,
    /// Side of the low-resolution render fed to the camera predictor.
    pub camera_res: usize,
    /// Standard deviation of the initial plane basis.
    pub basis_init: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            latent_dim: 64,
            resolution: 32,
            channels: 8,
            rank: 16,
            generator_hidden: 64,
            decoder_hidden: 64,
            decoder_activation: Activation::Relu,
            latent_proj: 8,
            view_dependent: false,
            camera_res: 16,
            basis_init: 0.1,
        }
    }
}

impl FieldConfig {
    pub fn plane_len(&self) -> usize {
        3 * self.resolution * self.resolution * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("resolution", self.resolution),
            ("channels", self.channels),
            ("rank", self.rank),
            ("generator_hidden", self.generator_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("latent_proj", self.latent_proj),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("field.{name} must be positive")));
            }
        }
        if self.resolution < 2 {
            return Err(Error::Config("field.resolution must be at least 2".into()));
        }
        if self.camera_res == 0 || self.camera_res % 16 != 0 {
            return Err(Error::Config(format!(
                "field.camera_res = {} must be a positive multiple of 16",
                self.camera_res
            )));
        }
        Ok(())
    }
}

/// Latent → tri-plane features as `MLP(w)·B + b`, with `B` a learned
/// `rank × 3R²k` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneGenerator {
    pub mapping: Mlp,
    pub basis: ParamId,
    pub bias: ParamId,
}

impl TriPlaneGenerator {
    pub fn new(store: &mut ParamStore, cfg: &FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        let mapping = Mlp::new(
            store,
            "generator.mapping",
            &[cfg.latent_dim, cfg.generator_hidden, cfg.rank],
            Activation::Softplus,
            Activation::None,
            false,
            rng,
        )?;
        let normal = Normal::new(0.0, cfg.basis_init).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..cfg.rank * cfg.plane_len())
            .map(|_| normal.sample(rng))
            .collect();
        let basis = store.insert(
            "generator.basis",
            Matrix::from_vec(cfg.rank, cfg.plane_len(), data)?,
        )?;
        let bias = store.insert("generator.bias", Matrix::zeros(1, cfg.plane_len()))?;
        Ok(TriPlaneGenerator {
            mapping,
            basis,
            bias,
        })
    }

    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        latent: Var,
    ) -> Result<Var> {
        let a = self.mapping.forward(tape, store, latent)?;
        let b = tape.param(store, self.basis);
        let planes = tape.matmul(a, b)?;
        let bias = tape.param(store, self.bias);
        tape.add(planes, bias)
    }

    pub fn eval(&self, store: &ParamStore, latent: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let l = tape.constant(latent);
        let out = self.forward(&mut tape, store, l)?;
        Ok(tape.value(out).clone())
    }
}

/// Tri-plane feature plus projected latent → `(σ, rgb)` through a
/// two-layer MLP; `σ = softplus`, `rgb = sigmoid`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub latent_proj: Linear,
    pub mlp: Mlp,
    pub view_dependent: bool,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: &FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        let latent_proj = Linear::new(
            store,
            "decoder.latent_proj",
            cfg.latent_dim,
            cfg.latent_proj,
            rng,
        )?;
        let input = cfg.channels + cfg.latent_proj + if cfg.view_dependent { 3 } else { 0 };
        let mlp = Mlp::new(
            store,
            "decoder.mlp",
            &[input, cfg.decoder_hidden, 4],
            cfg.decoder_activation,
            Activation::None,
            false,
            rng,
        )?;
        Ok(Decoder {
            latent_proj,
            mlp,
            view_dependent: cfg.view_dependent,
        })
    }

    /// Returns `(σ n×1, rgb n×3)`.
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        features: Var,
        latent: Var,
        view_dirs: Option<Var>,
    ) -> Result<(Var, Var)> {
        let n = tape.value(features).rows();
        let proj = self.latent_proj.forward(tape, store, latent)?;
        let proj = tape.broadcast_rows(proj, n)?;
        let mut input = tape.concat(features, proj)?;
        if self.view_dependent {
            let dirs = view_dirs.ok_or_else(|| {
                Error::Contract("view-dependent decoder needs view directions".into())
            })?;
            input = tape.concat(input, dirs)?;
        }
        let raw = self.mlp.forward(tape, store, input)?;
        let s = tape.slice_cols(raw, 0, 1)?;
        let c = tape.slice_cols(raw, 1, 3)?;
        Ok((
            tape.activate(s, Activation::Softplus),
            tape.activate(c, Activation::Sigmoid),
        ))
    }
}

/// Per-object codes optimized jointly with the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    pub latents: Matrix,
}

impl LatentTable {
    /// Rows drawn from `N(0, 0.01²)`.
    pub fn new(n_objects: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        let data = (0..n_objects * dim).map(|_| normal.sample(rng)).collect();
        LatentTable {
            latents: Matrix::from_raw(n_objects, dim, data),
        }
    }

    pub fn len(&self) -> usize {
        self.latents.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.rows() == 0
    }

    pub fn row(&self, i: usize) -> Result<&[f64]> {
        if i >= self.latents.rows() {
            return Err(Error::Contract(format!(
                "latent row {i} requested from a table of {}",
                self.latents.rows()
            )));
        }
        Ok(self.latents.row(i))
    }

    pub fn mean(&self) -> Vec<f64> {
        let (n, d) = self.latents.shape();
        let mut m = vec![0.0; d];
        for i in 0..n {
            for (acc, v) in m.iter_mut().zip(self.latents.row(i)) {
                *acc += v;
            }
        }
        m.iter().map(|v| v / n.max(1) as f64).collect()
    }
}

/// Generator, decoder, camera predictor and latent table.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Model {
    pub config: FieldConfig,
    pub store: ParamStore,
    pub generator: TriPlaneGenerator,
    pub decoder: Decoder,
    pub predictor: CameraPredictor,
    pub latents: LatentTable,
}

const LATENT_PARAM: &str = "latent_table";

impl Stage1Model {
    pub fn new(config: FieldConfig, n_objects: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if n_objects == 0 {
            return Err(Error::Contract(
                "stage-1 model needs at least one object".into(),
            ));
        }
        let mut store = ParamStore::new();
        let generator = TriPlaneGenerator::new(&mut store, &config, rng)?;
        let decoder = Decoder::new(&mut store, &config, rng)?;
        let predictor =
            CameraPredictor::new(&mut store, "camera_predictor", config.camera_res, rng)?;
        let latents = LatentTable::new(n_objects, config.latent_dim, rng);
        Ok(Stage1Model {
            config,
            store,
            generator,
            decoder,
            predictor,
            latents,
        })
    }

    /// Frozen field for one latent code.
    pub fn instance(&self, latent: &[f64]) -> Result<FieldInstance<'_>> {
        FieldInstance::new(self, latent)
    }

    pub fn instance_for(&self, object: usize) -> Result<FieldInstance<'_>> {
        self.instance(self.latents.row(object)?)
    }

    pub fn render_view(
        &self,
        object: usize,
        camera: &Camera,
        settings: &RenderSettings,
    ) -> Result<RenderedView> {
        let mut view = render_view(&self.instance_for(object)?, camera, settings)?;
        view.latent_index = Some(object);
        Ok(view)
    }

    /// Plane features for a latent already on the tape.
    pub fn planes<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        latent: Var,
    ) -> Result<Var> {
        self.generator.forward(tape, store, latent)
    }

    /// Record σ and rgb for `points`; density is zeroed outside `[-1, 1]³`.
    pub fn decode<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        planes: Var,
        latent: Var,
        points: Var,
        view_dirs: Option<Var>,
    ) -> Result<(Var, Var)> {
        let (features, inside) =
            tape.triplane(planes, points, self.config.resolution, self.config.channels)?;
        let (sigma, rgb) = self
            .decoder
            .forward(tape, store, features, latent, view_dirs)?;
        if inside.iter().all(|&b| b) {
            return Ok((sigma, rgb));
        }
        let mask = Matrix::from_raw(
            inside.len(),
            1,
            inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        );
        let mask = tape.constant(mask);
        Ok((tape.mul(sigma, mask)?, rgb))
    }

    /// Checkpoint: network parameters plus the latent table as one
    /// container.
    pub fn checkpoint(&self) -> Result<ParamStore> {
        let mut out = self.store.clone();
        out.insert(LATENT_PARAM, self.latents.latents.clone())?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint()?.save(path)
    }

    /// Rebuild from a checkpoint written by [`Stage1Model::save`] with the
    /// same `config`.
    pub fn load(path: &Path, config: FieldConfig) -> Result<Self> {
        let ckpt = ParamStore::load(path)?;
        Self::from_checkpoint(&ckpt, config)
    }

    pub fn from_checkpoint(ckpt: &ParamStore, config: FieldConfig) -> Result<Self> {
        let latents = ckpt
            .id(LATENT_PARAM)
            .map(|id| ckpt.get(id).clone())
            .ok_or_else(|| Error::Contract("checkpoint has no latent table".into()))?;
        let mut rng = crate::rng_for(0, 0);
        let mut model = Stage1Model::new(config, latents.rows().max(1), &mut rng)?;
        if latents.cols() != config.latent_dim {
            return Err(Error::shape(
                "checkpoint",
                format!("latent width {}", latents.cols()),
            ));
        }
        model.store.assign_from(ckpt)?;
        model.latents = LatentTable { latents };
        Ok(model)
    }
}

/// A [`Stage1Model`] conditioned on one latent with its planes generated
/// once; rendering it never touches the model's parameters mutably.
pub struct FieldInstance<'m> {
    model: &'m Stage1Model,
    latent: Matrix,
    planes: Matrix,
    /// Latent after the decoder's projection layer.
    proj: Vec<f64>,
}

impl<'m> FieldInstance<'m> {
    pub fn new(model: &'m Stage1Model, latent: &[f64]) -> Result<Self> {
        if latent.len() != model.config.latent_dim {
            return Err(Error::shape(
                "field_instance",
                format!("latent of {}", latent.len()),
            ));
        }
        let latent = Matrix::from_vec(1, latent.len(), latent.to_vec())?;
        let planes = model.generator.eval(&model.store, &latent)?;
        let proj = model
            .decoder
            .latent_proj
            .eval(&model.store, &latent)?
            .into_data();
        Ok(FieldInstance {
            model,
            latent,
            planes,
            proj,
        })
    }

    pub fn planes(&self) -> &Matrix {
        &self.planes
    }

    fn decoder_input(&self, points: &Matrix, dirs: &Matrix) -> (Matrix, Vec<bool>) {
        let cfg = &self.model.config;
        let meta = TriplaneMeta {
            res: cfg.resolution,
            channels: cfg.channels,
        };
        let (feat, inside) = triplane_kernel(self.planes.data(), points, &meta);
        let (n, k, p) = (points.rows(), cfg.channels, self.proj.len());
        let v = if cfg.view_dependent { 3 } else { 0 };
        let mut input = Vec::with_capacity(n * (k + p + v));
        for i in 0..n {
            input.extend_from_slice(feat.row(i));
            input.extend_from_slice(&self.proj);
            if cfg.view_dependent {
                input.extend_from_slice(dirs.row(i));
            }
        }
        (Matrix::from_raw(n, k + p + v, input), inside)
    }

    /// Decoder outputs `(σ, rgb)` for a batch of points and unit view
    /// directions (ignored unless the decoder is view dependent).
    pub fn field_eval(&self, points: &Matrix, dirs: &Matrix) -> Result<FieldSamples> {
        if points.cols() != 3 || dirs.shape() != points.shape() {
            return Err(Error::shape(
                "field_eval",
                format!("points {:?}, dirs {:?}", points.shape(), dirs.shape()),
            ));
        }
        let (input, inside) = self.decoder_input(points, dirs);
        let raw = self.model.decoder.mlp.eval(&self.model.store, &input)?;
        let n = points.rows();
        let mut sigma = Vec::with_capacity(n);
        let mut rgb = Vec::with_capacity(3 * n);
        for i in 0..n {
            let r = raw.row(i);
            sigma.push(if inside[i] { softplus(r[0]) } else { 0.0 });
            rgb.extend([sigmoid(r[1]), sigmoid(r[2]), sigmoid(r[3])]);
        }
        Ok(FieldSamples {
            sigma,
            rgb: Matrix::from_raw(n, 3, rgb),
        })
    }

    /// `(σ, rgb)` at one point seen along `dir`.
    pub fn eval_point(&self, p: &Vec3, dir: &Vec3) -> Result<(f64, [f64; 3])> {
        let s = self.field_eval(
            &Matrix::from_vec(1, 3, vec![p.x, p.y, p.z])?,
            &Matrix::from_vec(1, 3, vec![dir.x, dir.y, dir.z])?,
        )?;
        let c = s.rgb.row(0);
        Ok((s.sigma[0], [c[0], c[1], c[2]]))
    }
}

impl RadianceField for FieldInstance<'_> {
    fn eval(&self, points: &Matrix, dirs: &Matrix) -> Result<FieldSamples> {
        self.field_eval(points, dirs)
    }

    fn density_gradient(&self, points: &Matrix, dirs: &Matrix) -> Result<Matrix> {
        let model = self.model;
        let mut tape = Tape::new();
        let planes = tape.constant(&self.planes);
        let pts = tape.input(points);
        let (feat, inside) =
            tape.triplane(planes, pts, model.config.resolution, model.config.channels)?;
        let latent = tape.constant(&self.latent);
        let dirs = tape.constant(dirs);
        let (sigma, _) =
            model
                .decoder
                .forward(&mut tape, &model.store, feat, latent, Some(dirs))?;
        let total = tape.sum(sigma);
        let grads = tape.backward(total)?;
        let mut g = grads
            .wrt(pts)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(points.rows(), 3));
        for (i, &inside) in inside.iter().enumerate() {
            if !inside {
                g.row_mut(i).fill(0.0);
            }
        }
        Ok(g)
    }
}
