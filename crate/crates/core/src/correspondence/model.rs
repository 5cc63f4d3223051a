use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lipschitz_penalty, Activation, Linear, Matrix, Mlp, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::texture::CanonicalMap;
use crate::Vec3;

/// Channels per basis vector: rgb, normal, point.
pub const BASIS_CHANNELS: usize = 9;
pub const RGB: std::ops::Range<usize> = 0..3;
pub const NORMAL: std::ops::Range<usize> = 3..6;
pub const POINT: std::ops::Range<usize> = 6..9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrespondenceConfig {
    /// Latent width; must match the radiance field's.
    pub latent_dim: usize,
    pub shape_dim: usize,
    pub n_basis: usize,
    pub latent_width: usize,
    /// Layers of the correspondence network, output layer included.
    pub correspond_layers: usize,
    pub correspond_width: usize,
    pub basis_layers: usize,
    pub basis_width: usize,
}

impl Default for CorrespondenceConfig {
    fn default() -> Self {
        CorrespondenceConfig {
            latent_dim: 64,
            shape_dim: 32,
            n_basis: 8,
            latent_width: 128,
            correspond_layers: 6,
            correspond_width: 128,
            basis_layers: 5,
            basis_width: 128,
        }
    }
}

impl CorrespondenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("shape_dim", self.shape_dim),
            ("n_basis", self.n_basis),
            ("latent_width", self.latent_width),
            ("correspond_width", self.correspond_width),
            ("basis_width", self.basis_width),
        ] {
            if v == 0 {
                return Err(Error::Config(format!(
                    "stage2.network.{name} must be positive"
                )));
            }
        }
        if self.correspond_layers < 2 || self.basis_layers < 2 {
            return Err(Error::Config(
                "stage2.network needs at least two layers per MLP".into(),
            ));
        }
        Ok(())
    }

    fn dims(input: usize, width: usize, layers: usize, out: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat(width).take(layers - 1));
        d.push(out);
        d
    }
}

/// Latent → shape code and basis coefficients through a shared trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMap {
    pub trunk: Mlp,
    pub shape_head: Linear,
    pub coeff_head: Linear,
}

/// Stage-2 networks: latent map `L`, Lipschitz correspondence `M` and
/// basis `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceModel {
    pub config: CorrespondenceConfig,
    pub store: ParamStore,
    pub latent_map: LatentMap,
    pub correspond: Mlp,
    pub basis: Mlp,
}

/// Everything one forward pass records on a tape.
pub struct Stage2Forward {
    pub shape_code: Var,
    /// `1 × n_basis·9`.
    pub coeffs: Var,
    /// `n × 2`.
    pub uv: Var,
    /// `n × 9`: rgb, normal, point.
    pub decomposed: Var,
}

impl CorrespondenceModel {
    pub fn new(config: CorrespondenceConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        let trunk = Mlp::new(
            &mut store,
            "latent_map.trunk",
            &[c.latent_dim, c.latent_width, c.latent_width],
            Activation::Softplus,
            Activation::Softplus,
            false,
            rng,
        )?;
        let shape_head = Linear::new(
            &mut store,
            "latent_map.shape",
            c.latent_width,
            c.shape_dim,
            rng,
        )?;
        let coeff_head = Linear::new(
            &mut store,
            "latent_map.coeffs",
            c.latent_width,
            c.n_basis * BASIS_CHANNELS,
            rng,
        )?;
        let correspond = Mlp::new(
            &mut store,
            "correspond",
            &CorrespondenceConfig::dims(
                3 + c.shape_dim,
                c.correspond_width,
                c.correspond_layers,
                2,
            ),
            Activation::Softplus,
            Activation::None,
            true,
            rng,
        )?;
        let basis = Mlp::new(
            &mut store,
            "basis",
            &CorrespondenceConfig::dims(
                2,
                c.basis_width,
                c.basis_layers,
                c.n_basis * BASIS_CHANNELS,
            ),
            Activation::Softplus,
            Activation::None,
            false,
            rng,
        )?;
        Ok(CorrespondenceModel {
            config,
            store,
            latent_map: LatentMap {
                trunk,
                shape_head,
                coeff_head,
            },
            correspond,
            basis,
        })
    }

    /// Rebuild from saved parameters; the configuration must match.
    pub fn from_store(config: CorrespondenceConfig, saved: &ParamStore) -> Result<Self> {
        let mut rng = crate::rng_for(0, 0);
        let mut model = CorrespondenceModel::new(config, &mut rng)?;
        model.store.assign_from(saved)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    pub fn load(path: &Path, config: CorrespondenceConfig) -> Result<Self> {
        CorrespondenceModel::from_store(config, &ParamStore::load(path)?)
    }

    fn check_latent(&self, latent: &[f64]) -> Result<()> {
        if latent.len() != self.config.latent_dim {
            return Err(Error::shape(
                "latent_map",
                format!(
                    "latent of length {} for width {}",
                    latent.len(),
                    self.config.latent_dim
                ),
            ));
        }
        Ok(())
    }

    /// Shape code and `n_basis × 9` coefficients for a latent.
    pub fn latent_map(&self, latent: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        self.check_latent(latent)?;
        let w = Matrix::row_vector(latent.to_vec());
        let h = self.latent_map.trunk.eval(&self.store, &w)?;
        let code = self.latent_map.shape_head.eval(&self.store, &h)?;
        let coeffs = self.latent_map.coeff_head.eval(&self.store, &h)?;
        Ok((
            code.into_data(),
            Matrix::from_vec(self.config.n_basis, BASIS_CHANNELS, coeffs.into_data())?,
        ))
    }

    /// Canonical coordinates of surface points under one shape code.
    pub fn correspond(&self, points: &[Vec3], shape_code: &[f64]) -> Result<Vec<[f64; 2]>> {
        if shape_code.len() != self.config.shape_dim {
            return Err(Error::shape(
                "correspond",
                format!(
                    "shape code of length {} for width {}",
                    shape_code.len(),
                    self.config.shape_dim
                ),
            ));
        }
        let s = self.config.shape_dim;
        let mut x = Matrix::zeros(points.len(), 3 + s);
        for (i, p) in points.iter().enumerate() {
            let row = x.row_mut(i);
            row[..3].copy_from_slice(p.as_slice());
            row[3..].copy_from_slice(shape_code);
        }
        let uv = self.correspond.eval(&self.store, &x)?;
        Ok((0..points.len())
            .map(|i| [uv.get(i, 0), uv.get(i, 1)])
            .collect())
    }

    /// Deformed basis at each uv, `n × n_basis·9`.
    pub fn basis_eval(&self, uv: &[[f64; 2]]) -> Result<Matrix> {
        let data = uv.iter().flat_map(|u| u.iter().copied()).collect();
        self.basis
            .eval(&self.store, &Matrix::from_vec(uv.len(), 2, data)?)
    }

    /// `Π softplus(c_l)` of the correspondence network.
    pub fn lipschitz_bound(&self) -> f64 {
        self.correspond.lipschitz_bound(&self.store)
    }

    /// Record the full Stage-2 forward pass for `points` (`n×3`) of the
    /// object with latent `latent` (`1×D`).
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        latent: Var,
        points: Var,
    ) -> Result<Stage2Forward> {
        let n = tape.value(points).rows();
        let h = self.latent_map.trunk.forward(tape, store, latent)?;
        let shape_code = self.latent_map.shape_head.forward(tape, store, h)?;
        let coeffs = self.latent_map.coeff_head.forward(tape, store, h)?;
        let code_rows = tape.broadcast_rows(shape_code, n)?;
        let input = tape.concat(points, code_rows)?;
        let uv = self.correspond.forward(tape, store, input)?;
        let basis = self.basis.forward(tape, store, uv)?;
        let decomposed = decompose_on_tape(tape, basis, coeffs)?;
        Ok(Stage2Forward {
            shape_code,
            coeffs,
            uv,
            decomposed,
        })
    }

    /// `Π softplus(c_l)` of the correspondence network, on the tape.
    pub fn penalty<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore) -> Result<Var> {
        lipschitz_penalty(tape, store, &self.correspond.lipschitz_layers())
    }

    /// The canonical map of one object.
    pub fn object_map(&self, latent: &[f64]) -> Result<ObjectMap<'_>> {
        let (shape_code, _) = self.latent_map(latent)?;
        Ok(ObjectMap {
            model: self,
            shape_code,
        })
    }
}

/// `out[g] = Σ_b coeffs[b, g]·basis[b, g]` over the 9 channels.
pub fn decompose(basis: &Matrix, coeffs: &Matrix) -> Result<[f64; BASIS_CHANNELS]> {
    if basis.shape() != coeffs.shape() || basis.cols() != BASIS_CHANNELS {
        return Err(Error::shape(
            "decompose",
            format!(
                "basis {:?} vs coefficients {:?}",
                basis.shape(),
                coeffs.shape()
            ),
        ));
    }
    let mut out = [0.0; BASIS_CHANNELS];
    for b in 0..basis.rows() {
        for (g, o) in out.iter_mut().enumerate() {
            *o += coeffs.get(b, g) * basis.get(b, g);
        }
    }
    Ok(out)
}

/// Tape version of [`decompose`] for `n` rows of flattened bases against
/// one flattened coefficient row.
pub fn decompose_on_tape(tape: &mut Tape<'_>, basis: Var, coeffs: Var) -> Result<Var> {
    let n = tape.value(basis).rows();
    let c = tape.broadcast_rows(coeffs, n)?;
    let weighted = tape.mul(basis, c)?;
    tape.group_sum(weighted, BASIS_CHANNELS)
}

/// [`CorrespondenceModel::correspond`] bound to one object's shape code.
pub struct ObjectMap<'m> {
    pub model: &'m CorrespondenceModel,
    pub shape_code: Vec<f64>,
}

impl CanonicalMap for ObjectMap<'_> {
    fn canonical(&self, points: &[Vec3]) -> Result<Vec<[f64; 2]>> {
        self.model.correspond(points, &self.shape_code)
    }
}
