use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::correspondence::Stage2Config;
use crate::error::{Error, Result};
use crate::field::{InversionConfig, RenderSettings, Stage1Config};
use crate::synthetic::DatasetConfig;
use crate::texture::{EditRule, DEFAULT_K};

/// Geometry Stage 2 is trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Geometry {
    /// Five-view renders of the trained Stage-1 field.
    #[default]
    Rendered,
    /// Oracle renders at the same five poses, paired with Stage-1 latents.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    pub k: usize,
    pub edit_rule: EditRule,
}

impl Default for TextureConfig {
    fn default() -> Self {
        TextureConfig {
            k: DEFAULT_K,
            edit_rule: EditRule::Priority,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub tiles: usize,
    /// Working-set cap for one tile; unlimited when absent.
    pub memory_cap_bytes: Option<usize>,
    /// Side of the high-resolution front view rendered by `run-all`.
    pub highres: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            tiles: 4,
            memory_cap_bytes: None,
            highres: 128,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub histogram_bins: usize,
    pub transfer_source: usize,
    pub transfer_target: usize,
    /// Side of the painted edit square as a fraction of the edit image.
    pub edit_square: f64,
    pub edit_color: [f64; 3],
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            histogram_bins: 16,
            transfer_source: 0,
            transfer_target: 1,
            edit_square: 0.3,
            edit_color: [1.0, 0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// When set, every stage seed is derived from it.
    pub seed: Option<u64>,
    pub dataset: DatasetConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub stage2_geometry: Stage2Geometry,
    /// Quadrature for the rendered dataset and for synthesis.
    pub render: RenderSettings,
    pub texture: TextureConfig,
    pub synthesis: SynthesisConfig,
    pub inversion: InversionConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut stage1 = Stage1Config::default();
        stage1.steps = 3000;
        stage1.lr_start = 5e-3;
        stage1.lr_end = 5e-4;
        stage1.loss.camera = 0.0;
        let mut stage2 = Stage2Config::default();
        stage2.steps = 4000;
        stage2.lr_start = 3e-3;
        PipelineConfig {
            seed: None,
            dataset: DatasetConfig::default(),
            stage1,
            stage2,
            stage2_geometry: Stage2Geometry::Rendered,
            render: RenderSettings::new(64, 0.0, 6.0),
            texture: TextureConfig::default(),
            synthesis: SynthesisConfig::default(),
            inversion: InversionConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    crate::rng_for(seed, 100 + stream).next_u64()
}

impl PipelineConfig {
    /// Four objects at 32², small networks and few steps.
    pub fn smoke() -> Self {
        let mut c = PipelineConfig::default();
        c.dataset.n_objects = 4;
        c.dataset.resolution = 32;
        c.stage1.field.resolution = 16;
        c.stage1.field.latent_dim = 16;
        c.stage1.field.rank = 8;
        c.stage1.field.generator_hidden = 32;
        c.stage1.field.decoder_hidden = 32;
        c.stage1.steps = 300;
        c.stage1.rays_per_step = 256;
        c.stage2.network.latent_dim = 16;
        c.stage2.network.shape_dim = 8;
        c.stage2.network.latent_width = 32;
        c.stage2.network.correspond_width = 32;
        c.stage2.network.correspond_layers = 4;
        c.stage2.network.basis_width = 32;
        c.stage2.network.basis_layers = 3;
        c.stage2.steps = 200;
        c.stage2.batch = 256;
        c.render = RenderSettings::new(32, 0.0, 6.0);
        c.synthesis.highres = 64;
        c.inversion.steps = 50;
        c
    }

    /// Parse TOML (by `.toml` extension) or JSON, then validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: PipelineConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::layout::write_json(path, self)
    }

    /// Set the global seed; per-stage seeds follow from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.resolve_seeds();
        self
    }

    /// Overwrite per-stage seeds from `seed` when it is set.
    pub fn resolve_seeds(&mut self) {
        if let Some(s) = self.seed {
            self.dataset.seed = derive_seed(s, 0);
            self.stage1.seed = derive_seed(s, 1);
            self.stage2.seed = derive_seed(s, 2);
            self.inversion.seed = derive_seed(s, 3);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.stage1.field.latent_dim != self.stage2.network.latent_dim {
            return bad(format!(
                "stage1.field.latent_dim = {} but stage2.network.latent_dim = {}",
                self.stage1.field.latent_dim, self.stage2.network.latent_dim
            ));
        }
        if self.render.n_samples < 2
            || !(0.0 <= self.render.near && self.render.near < self.render.far)
        {
            return bad(format!("render settings {:?}", self.render));
        }
        if self.texture.k == 0 {
            return bad("texture.k must be positive".into());
        }
        if self.synthesis.tiles == 0 || self.synthesis.highres < self.synthesis.tiles {
            return bad(format!(
                "synthesis: {} tiles for {} rows",
                self.synthesis.tiles, self.synthesis.highres
            ));
        }
        if self.eval.histogram_bins == 0 {
            return bad("eval.histogram_bins must be positive".into());
        }
        let n = self.dataset.n_objects;
        if self.eval.transfer_source >= n || self.eval.transfer_target >= n {
            return bad(format!(
                "transfer objects {} -> {} outside {n} objects",
                self.eval.transfer_source, self.eval.transfer_target
            ));
        }
        if !(self.eval.edit_square > 0.0 && self.eval.edit_square <= 1.0) {
            return bad(format!("eval.edit_square = {}", self.eval.edit_square));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_smoke_validate() {
        PipelineConfig::default().validate().unwrap();
        PipelineConfig::smoke().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[dataset]\nn_objects = 2\nbogus = 1\n").unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(Error::Config(_))));
        std::fs::write(&p, "seed = 3\n[dataset]\nn_objects = 2\n").unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.dataset.n_objects, 2);
        assert_eq!(c.seed, Some(3));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = PipelineConfig::smoke().with_seed(9);
        c.save(&p).unwrap();
        assert_eq!(PipelineConfig::load(&p).unwrap(), c);
    }

    #[test]
    fn seeds_are_derived_deterministically_and_distinct() {
        let a = PipelineConfig::default().with_seed(7);
        let b = PipelineConfig::default().with_seed(7);
        assert_eq!(a, b);
        let seeds = [
            a.dataset.seed,
            a.stage1.seed,
            a.stage2.seed,
            a.inversion.seed,
        ];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_ne!(
            PipelineConfig::default().with_seed(8).stage1.seed,
            a.stage1.seed
        );
    }

    #[test]
    fn mismatched_latent_dims_are_a_config_error() {
        let mut c = PipelineConfig::default();
        c.stage2.network.latent_dim = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
