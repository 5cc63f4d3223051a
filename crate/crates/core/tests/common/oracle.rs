//! Analytic fields with closed-form depth and normals.

use teglo::autodiff::Matrix;
use teglo::camera::{Camera, Ray};
use teglo::field::{render_rays, FieldSamples, RadianceField, RenderSettings};
use teglo::synthetic::{Pattern, Shape, SyntheticScene, TextureFn};
use teglo::Vec3;

/// Solid slab `|x·n - offset| <= half` of constant color.
pub struct Slab {
    pub normal: Vec3,
    pub offset: f64,
    pub half: f64,
    pub beta: f64,
}

impl Slab {
    fn sdf(&self, p: &Vec3) -> f64 {
        (p.dot(&self.normal) - self.offset).abs() - self.half
    }

    pub fn entry(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        let dn = ray.direction.dot(&self.normal);
        let on = ray.origin.dot(&self.normal) - self.offset;
        if dn == 0.0 {
            return None;
        }
        let face = if on > 0.0 { self.half } else { -self.half };
        let t = (face - on) / dn;
        let p = ray.at(t);
        let inside = p.iter().all(|c| c.abs() <= 1.0);
        (t > 0.0 && inside).then(|| (t, self.normal * face.signum()))
    }
}

impl RadianceField for Slab {
    fn eval(&self, points: &Matrix, _dirs: &Matrix) -> teglo::Result<FieldSamples> {
        let n = points.rows();
        let sigma = (0..n)
            .map(|i| {
                let r = points.row(i);
                self.beta * (-self.sdf(&Vec3::new(r[0], r[1], r[2]))).max(0.0)
            })
            .collect();
        Ok(FieldSamples {
            sigma,
            rgb: Matrix::filled(n, 3, 0.5),
        })
    }

    fn density_gradient(&self, points: &Matrix, _dirs: &Matrix) -> teglo::Result<Matrix> {
        let n = points.rows();
        let mut g = Matrix::zeros(n, 3);
        for i in 0..n {
            let r = points.row(i);
            let p = Vec3::new(r[0], r[1], r[2]);
            if self.sdf(&p) < 0.0 {
                let s = (p.dot(&self.normal) - self.offset).signum();
                for a in 0..3 {
                    g.set(i, a, -self.beta * s * self.normal[a]);
                }
            }
        }
        Ok(g)
    }
}

pub fn sphere(beta: f64) -> SyntheticScene {
    SyntheticScene {
        beta,
        ..SyntheticScene::new(
            vec![Shape::Sphere {
                center: [0.05, -0.05, 0.1],
                radius: 0.6,
            }],
            TextureFn {
                pattern: Pattern::Gradient,
                color_a: [0.1, 0.2, 0.3],
                color_b: [0.9, 0.8, 0.7],
                sharpness: 1.0,
            },
        )
    }
}

pub struct Agreement {
    pub depth: f64,
    pub normal: f64,
    pub foreground: usize,
}

/// Fraction of oracle-foreground rays whose rendered depth lies within
/// 2Δt and whose normal lies within 2° of the exact values.
pub fn agreement<F: RadianceField>(
    field: &F,
    rays: &[Ray],
    oracle: impl Fn(&Ray) -> Option<(f64, Vec3)>,
    settings: &RenderSettings,
) -> Agreement {
    let renders = render_rays(field, rays, settings, true).unwrap();
    let (mut fg, mut d_ok, mut n_ok) = (0, 0, 0);
    for (ray, r) in rays.iter().zip(&renders) {
        let Some((t, n)) = oracle(ray) else { continue };
        let clipped = ray.clip_to_cube(1.0).unwrap();
        let dt = (clipped.far - clipped.near) / settings.n_samples as f64;
        fg += 1;
        if (r.depth - t).abs() <= 2.0 * dt {
            d_ok += 1;
        }
        if let Some(rn) = r.normal {
            if rn.dot(&n).clamp(-1.0, 1.0).acos().to_degrees() <= 2.0 {
                n_ok += 1;
            }
        }
    }
    Agreement {
        depth: d_ok as f64 / fg as f64,
        normal: n_ok as f64 / fg as f64,
        foreground: fg,
    }
}

pub fn camera_rays(cam: &Camera, settings: &RenderSettings) -> Vec<Ray> {
    let px: Vec<(usize, usize)> = (0..cam.height)
        .flat_map(|v| (0..cam.width).map(move |u| (u, v)))
        .collect();
    cam.generate_rays(&px, settings.near, settings.far).unwrap()
}
