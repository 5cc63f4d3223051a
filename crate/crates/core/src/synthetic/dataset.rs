use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{canonical_five_poses, Camera, PoseTag};
use crate::error::{Error, Result};
use crate::field::TrainingView;

use super::oracle::{oracle_render, OracleView};
use super::scene::{Pattern, Shape, SyntheticScene, TextureFn, DEFAULT_BETA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_objects: usize,
    pub resolution: usize,
    pub seed: u64,
    pub radius: f64,
    pub fov_deg: f64,
    /// Training azimuths are stratified over `±azimuth_deg`.
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub min_period_deg: f64,
    pub max_period_deg: f64,
    pub sharpness: f64,
    pub beta: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_objects: 8,
            resolution: 64,
            seed: 0,
            radius: 2.7,
            fov_deg: 30.0,
            azimuth_deg: 75.0,
            elevation_deg: 15.0,
            min_period_deg: 30.0,
            max_period_deg: 60.0,
            sharpness: 3.0,
            beta: DEFAULT_BETA,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_objects == 0 {
            return bad("n_objects must be positive");
        }
        if self.resolution < 2 {
            return bad("resolution must be at least 2");
        }
        if !(self.radius > 1.8) {
            return bad("camera radius must keep the camera outside the scene cube");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("fov_deg must lie in (0, 180)");
        }
        if !(self.min_period_deg > 0.0 && self.min_period_deg <= self.max_period_deg) {
            return bad("pattern periods must satisfy 0 < min <= max");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticObject {
    pub scene: SyntheticScene,
    pub train_camera: Camera,
    pub train_view: OracleView,
    /// Oracle renders at the five canonical poses.
    pub eval_views: Vec<(PoseTag, OracleView)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub config: DatasetConfig,
    pub objects: Vec<SyntheticObject>,
}

impl SyntheticDataset {
    pub fn training_views(&self) -> Vec<TrainingView> {
        self.objects
            .iter()
            .map(|o| TrainingView {
                image: o.train_view.view.rgb.clone(),
                camera: o.train_camera.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.05..0.95),
    ]
}

/// Random texture; the two colors differ by at least 0.3 in some channel.
pub fn random_texture<R: Rng>(rng: &mut R, config: &DatasetConfig) -> TextureFn {
    let color_a = random_color(rng);
    let color_b = loop {
        let c = random_color(rng);
        if (0..3).any(|i| (c[i] - color_a[i]).abs() > 0.3) {
            break c;
        }
    };
    // whole numbers of cells around the azimuth
    let cells = |rng: &mut R| {
        let lo = (360.0 / config.max_period_deg).ceil().max(1.0) as usize;
        let hi = ((360.0 / config.min_period_deg).floor() as usize).max(lo);
        360.0 / rng.gen_range(lo..=hi) as f64
    };
    let pattern = match rng.gen_range(0..3) {
        0 => Pattern::Checker {
            period_deg: cells(rng),
        },
        1 => Pattern::Stripes {
            period_deg: cells(rng),
        },
        _ => Pattern::Gradient,
    };
    TextureFn {
        pattern,
        color_a,
        color_b,
        sharpness: config.sharpness,
    }
}

/// Random shape of the given kind (0 sphere, 1 ellipsoid, 2 box, 3 union
/// of two spheres), centered near the origin and inside `[-0.9, 0.9]³`.
pub fn random_shapes<R: Rng>(rng: &mut R, kind: usize) -> Vec<Shape> {
    let mut jitter = || {
        [
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        ]
    };
    let center = jitter();
    match kind % 4 {
        0 => vec![Shape::Sphere {
            center,
            radius: rng.gen_range(0.5..0.7),
        }],
        1 => vec![Shape::Ellipsoid {
            center,
            radii: [
                rng.gen_range(0.45..0.7),
                rng.gen_range(0.45..0.7),
                rng.gen_range(0.45..0.7),
            ],
        }],
        2 => vec![Shape::Box {
            center,
            half: [
                rng.gen_range(0.4..0.55),
                rng.gen_range(0.4..0.55),
                rng.gen_range(0.4..0.55),
            ],
        }],
        _ => {
            let axis = rng.gen_range(0..3);
            let offset = rng.gen_range(0.2..0.3);
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            a[axis] = offset;
            b[axis] = -offset;
            vec![
                Shape::Sphere {
                    center: a,
                    radius: rng.gen_range(0.4..0.5),
                },
                Shape::Sphere {
                    center: b,
                    radius: rng.gen_range(0.4..0.5),
                },
            ]
        }
    }
}

/// Deterministic dataset of `n_objects` single-view scenes.
pub fn make_dataset(config: &DatasetConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let res = (config.resolution, config.resolution);
    let poses = canonical_five_poses(config.radius, res, config.fov_deg)?;
    let n = config.n_objects;
    let mut objects = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = crate::rng_for(config.seed, 1000 + i as u64);
        let scene = SyntheticScene {
            beta: config.beta,
            ..SyntheticScene::new(random_shapes(&mut rng, i), random_texture(&mut rng, config))
        };
        let u: f64 = rng.gen_range(0.0..1.0);
        let az = if n == 1 {
            config.azimuth_deg * (2.0 * u - 1.0)
        } else {
            -config.azimuth_deg + 2.0 * config.azimuth_deg * (i as f64 + u) / n as f64
        };
        let el = rng.gen_range(-config.elevation_deg..=config.elevation_deg);
        let train_camera = Camera::orbit(az, el, config.radius, res, config.fov_deg)?;
        let train_view = oracle_render(&scene, &train_camera)?;
        let eval_views = poses
            .iter()
            .map(|(tag, cam)| Ok((tag, oracle_render(&scene, cam)?)))
            .collect::<Result<Vec<_>>>()?;
        objects.push(SyntheticObject {
            scene,
            train_camera,
            train_view,
            eval_views,
        });
    }
    Ok(SyntheticDataset {
        config: config.clone(),
        objects,
    })
}
