use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{composite_kernel, CompositeLayout, Matrix};
use crate::camera::{Camera, Ray};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::Vec3;

/// Opacity above which a pixel counts as foreground.
pub const FOREGROUND_THRESHOLD: f64 = 0.5;

/// `‖n̂‖` below which a normal is reported as degenerate.
pub const DEGENERATE_NORMAL: f64 = 1e-8;

/// Density and color at a batch of points.
#[derive(Clone, Debug)]
pub struct FieldSamples {
    pub sigma: Vec<f64>,
    /// `n×3`.
    pub rgb: Matrix,
}

/// Anything that can be volume rendered.
pub trait RadianceField {
    /// `points` and unit view `dirs` are both `n×3`.
    fn eval(&self, points: &Matrix, dirs: &Matrix) -> Result<FieldSamples>;

    /// `∇σ` at each point, `n×3`.
    fn density_gradient(&self, points: &Matrix, dirs: &Matrix) -> Result<Matrix>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSettings {
    pub n_samples: usize,
    /// Integration bounds along each ray before clipping to `[-1, 1]³`.
    pub near: f64,
    pub far: f64,
    /// Upper bound on points evaluated per field call.
    #[serde(default = "default_batch_points")]
    pub max_batch_points: usize,
}

fn default_batch_points() -> usize {
    1 << 15
}

impl RenderSettings {
    pub fn new(n_samples: usize, near: f64, far: f64) -> Self {
        RenderSettings {
            n_samples,
            near,
            far,
            max_batch_points: default_batch_points(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Contract(format!(
                "n_samples = {} (need ≥ 2)",
                self.n_samples
            )));
        }
        if !(0.0 <= self.near && self.near < self.far) {
            return Err(Error::Contract(format!(
                "bounds [{}, {}]",
                self.near, self.far
            )));
        }
        Ok(())
    }

    /// Rays evaluated per field call.
    pub fn rays_per_batch(&self) -> usize {
        (self.max_batch_points / self.n_samples).max(1)
    }
}

/// Stratified depths in `[near, far]`: `t_i = near + (i + u_i)·Δ` with
/// `u_i ~ U(0, 1)` when jittered, `u_i = 0.5` otherwise. Each sample's
/// quadrature width is the bin width `Δ`.
pub fn stratified_samples<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    n: usize,
    rng: Option<&mut R>,
) -> (Vec<f64>, Vec<f64>) {
    let dt = (far - near) / n as f64;
    let t = match rng {
        Some(rng) => (0..n)
            .map(|i| near + (i as f64 + rng.gen::<f64>()) * dt)
            .collect(),
        None => (0..n).map(|i| near + (i as f64 + 0.5) * dt).collect(),
    };
    (t, vec![dt; n])
}

/// Where each ray's samples fall.
#[derive(Clone, Debug)]
pub struct SampledRays {
    /// Index into the input rays, for rays that hit the domain.
    pub hits: Vec<usize>,
    pub points: Matrix,
    /// Ray direction repeated for each sample.
    pub dirs: Matrix,
    pub layout: CompositeLayout,
}

/// Clip rays to the unit cube and place stratified samples on the hits.
///
/// With `keep_misses`, rays that miss the cube are kept and sampled over
/// the unclipped bounds; all of their samples lie outside the domain, where
/// fields report zero density, so `hits` then covers every ray in order.
pub fn sample_rays<R: Rng + ?Sized>(
    rays: &[Ray],
    settings: &RenderSettings,
    mut rng: Option<&mut R>,
    keep_misses: bool,
) -> SampledRays {
    let s = settings.n_samples;
    let mut hits = Vec::new();
    let mut pts = Vec::new();
    let mut dirs = Vec::new();
    let mut t_all = Vec::new();
    let mut d_all = Vec::new();
    for (i, ray) in rays.iter().enumerate() {
        let bounded = Ray {
            near: settings.near,
            far: settings.far,
            ..*ray
        };
        let (span, inside) = match bounded.clip_to_cube(1.0) {
            Some(c) => (c, true),
            None if keep_misses => (bounded, false),
            None => continue,
        };
        let (t, d) = stratified_samples(span.near, span.far, s, rng.as_deref_mut());
        for &ti in &t {
            let p = ray.at(ti);
            if inside {
                // guard against rounding past the cube faces
                pts.extend([
                    p.x.clamp(-1.0, 1.0),
                    p.y.clamp(-1.0, 1.0),
                    p.z.clamp(-1.0, 1.0),
                ]);
            } else {
                pts.extend([p.x, p.y, p.z]);
            }
            dirs.extend(ray.direction.iter());
        }
        hits.push(i);
        t_all.extend(t);
        d_all.extend(d);
    }
    let n = hits.len();
    SampledRays {
        layout: CompositeLayout {
            n_rays: n,
            n_samples: s,
            t: t_all,
            delta: d_all,
            far: vec![settings.far; n],
        },
        points: Matrix::from_raw(n * s, 3, pts),
        dirs: Matrix::from_raw(n * s, 3, dirs),
        hits,
    }
}

/// Quadrature weights `w_i = T_i (1 − e^{−σ_i Δ_i})`.
pub fn sample_weights(sigma: &[f64], delta: &[f64]) -> Vec<f64> {
    let mut trans = 1.0;
    sigma
        .iter()
        .zip(delta)
        .map(|(&s, &d)| {
            let decay = (-s * d).exp();
            let w = trans * (1.0 - decay);
            trans *= decay;
            w
        })
        .collect()
}

/// Result of compositing one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayRender {
    pub rgb: [f64; 3],
    /// Expected termination distance along the ray.
    pub depth: f64,
    pub opacity: f64,
    pub t: Vec<f64>,
    pub weights: Vec<f64>,
    /// Unit normal from the density gradient, when requested and defined.
    pub normal: Option<Vec3>,
}

impl RayRender {
    fn empty(far: f64) -> Self {
        RayRender {
            rgb: [0.0; 3],
            depth: far,
            opacity: 0.0,
            t: Vec::new(),
            weights: Vec::new(),
            normal: None,
        }
    }
}

/// Render a batch of rays. Results do not depend on how rays are grouped.
pub fn render_rays<F: RadianceField + ?Sized>(
    field: &F,
    rays: &[Ray],
    settings: &RenderSettings,
    normals: bool,
) -> Result<Vec<RayRender>> {
    settings.validate()?;
    let mut out = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(settings.rays_per_batch()) {
        out.extend(render_chunk(field, chunk, settings, normals)?);
    }
    Ok(out)
}

fn render_chunk<F: RadianceField + ?Sized>(
    field: &F,
    rays: &[Ray],
    settings: &RenderSettings,
    normals: bool,
) -> Result<Vec<RayRender>> {
    let s = settings.n_samples;
    let sampled = sample_rays(rays, settings, None::<&mut crate::SeededRng>, false);
    let mut out: Vec<RayRender> = vec![RayRender::empty(settings.far); rays.len()];
    if sampled.hits.is_empty() {
        return Ok(out);
    }
    let samples = field.eval(&sampled.points, &sampled.dirs)?;
    let comp = composite_kernel(&samples.sigma, &samples.rgb, &sampled.layout);
    let grads = if normals {
        Some(field.density_gradient(&sampled.points, &sampled.dirs)?)
    } else {
        None
    };
    for (h, &ray_idx) in sampled.hits.iter().enumerate() {
        let range = h * s..(h + 1) * s;
        let row = comp.row(h);
        let weights = sample_weights(
            &samples.sigma[range.clone()],
            &sampled.layout.delta[range.clone()],
        );
        let normal = grads.as_ref().and_then(|g| {
            if row[3] <= FOREGROUND_THRESHOLD {
                return None;
            }
            let mut n = Vec3::zeros();
            for (k, &w) in range.clone().zip(&weights) {
                let gr = g.row(k);
                n -= w * Vec3::new(gr[0], gr[1], gr[2]);
            }
            let len = n.norm();
            (len >= DEGENERATE_NORMAL).then(|| n / len)
        });
        out[ray_idx] = RayRender {
            rgb: [row[0], row[1], row[2]],
            depth: row[4],
            opacity: row[3],
            t: sampled.layout.t[range].to_vec(),
            weights,
            normal,
        };
    }
    Ok(out)
}

pub fn render_ray<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    settings: &RenderSettings,
) -> Result<RayRender> {
    Ok(render_rays(field, std::slice::from_ref(ray), settings, false)?.remove(0))
}

/// Unit surface normal `n̂/‖n̂‖` with `n̂ = −Σ w_i ∇σ(x_i)`; `None` when the
/// ray is not opaque enough or `‖n̂‖` is degenerate.
pub fn render_normals<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    settings: &RenderSettings,
) -> Result<Option<Vec3>> {
    Ok(
        render_rays(field, std::slice::from_ref(ray), settings, true)?
            .remove(0)
            .normal,
    )
}

/// Per-pixel geometry and color for the pixel indices `y·W + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelSample {
    pub rgb: [f64; 3],
    pub opacity: f64,
    /// Distance along the optical axis.
    pub depth: f64,
    /// Zero for background or degenerate pixels.
    pub normal: Vec3,
    pub point: Vec3,
}

pub fn render_pixels<F: RadianceField + ?Sized>(
    field: &F,
    camera: &Camera,
    settings: &RenderSettings,
    pixels: &[usize],
    normals: bool,
) -> Result<Vec<PixelSample>> {
    let coords: Vec<(usize, usize)> = pixels
        .iter()
        .map(|&i| (i % camera.width, i / camera.width))
        .collect();
    let rays = camera.generate_rays(&coords, settings.near, settings.far)?;
    let renders = render_rays(field, &rays, settings, normals)?;
    coords
        .iter()
        .zip(&rays)
        .zip(renders)
        .map(|((&(u, v), ray), r)| {
            let depth = r.depth * camera.axial_factor(&ray.direction);
            let point = camera.backproject((u as f64 + 0.5, v as f64 + 0.5), depth)?;
            Ok(PixelSample {
                rgb: r.rgb,
                opacity: r.opacity,
                depth,
                normal: r.normal.unwrap_or_else(Vec3::zeros),
                point,
            })
        })
        .collect()
}

/// Everything the rendered dataset stores for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub rgb: Image,
    /// Distance along the optical axis, one channel.
    pub depth: Image,
    pub opacity: Image,
    /// Unit normals, zero on background.
    pub normals: Image,
    /// `backproject(camera, pixel, depth)`.
    pub points: Image,
    pub camera: Camera,
    pub latent_index: Option<usize>,
}

impl RenderedView {
    pub fn from_pixels(camera: &Camera, samples: &[PixelSample]) -> Result<Self> {
        let (w, h) = (camera.width, camera.height);
        if samples.len() != w * h {
            return Err(Error::shape(
                "rendered_view",
                format!("{} pixels for {w}x{h}", samples.len()),
            ));
        }
        let mut view = RenderedView {
            rgb: Image::new(w, h, 3),
            depth: Image::new(w, h, 1),
            opacity: Image::new(w, h, 1),
            normals: Image::new(w, h, 3),
            points: Image::new(w, h, 3),
            camera: camera.clone(),
            latent_index: None,
        };
        for (i, s) in samples.iter().enumerate() {
            view.rgb.at_mut(i).copy_from_slice(&s.rgb);
            view.depth.at_mut(i)[0] = s.depth;
            view.opacity.at_mut(i)[0] = s.opacity;
            view.normals.at_mut(i).copy_from_slice(s.normal.as_slice());
            view.points.at_mut(i).copy_from_slice(s.point.as_slice());
        }
        Ok(view)
    }

    /// Pixel indices whose opacity exceeds [`FOREGROUND_THRESHOLD`].
    pub fn foreground(&self) -> Vec<usize> {
        (0..self.opacity.pixel_count())
            .filter(|&i| self.opacity.at(i)[0] > FOREGROUND_THRESHOLD)
            .collect()
    }

    pub fn point(&self, index: usize) -> Vec3 {
        let p = self.points.at(index);
        Vec3::new(p[0], p[1], p[2])
    }
}

pub fn render_view<F: RadianceField + ?Sized>(
    field: &F,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<RenderedView> {
    let pixels: Vec<usize> = (0..camera.pixel_count()).collect();
    let samples = render_pixels(field, camera, settings, &pixels, true)?;
    RenderedView::from_pixels(camera, &samples)
}
