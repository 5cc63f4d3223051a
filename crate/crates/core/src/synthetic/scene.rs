use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::camera::Ray;
use crate::error::Result;
use crate::field::{FieldSamples, RadianceField};
use crate::Vec3;

/// Density scale of the analytic field, `σ = β·max(0, −sdf)`.
pub const DEFAULT_BETA: f64 = 1e5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
    Box { center: [f64; 3], half: [f64; 3] },
}

fn v(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl Shape {
    pub fn center(&self) -> Vec3 {
        match *self {
            Shape::Sphere { center, .. }
            | Shape::Ellipsoid { center, .. }
            | Shape::Box { center, .. } => v(center),
        }
    }

    /// Signed distance (exact for spheres and boxes, the usual first-order
    /// bound for ellipsoids; the zero set is exact for all three).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (p - v(center)).norm() - radius,
            Shape::Ellipsoid { center, radii } => {
                let q = p - v(center);
                let r = v(radii);
                let k0 = q.component_div(&r).norm();
                let k1 = q.component_div(&r.component_mul(&r)).norm();
                if k1 == 0.0 {
                    -r.min()
                } else {
                    k0 * (k0 - 1.0) / k1
                }
            }
            Shape::Box { center, half } => {
                let q = (p - v(center)).abs() - v(half);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
        }
    }

    /// Analytic `∇sdf`.
    pub fn sdf_gradient(&self, p: &Vec3) -> Vec3 {
        match *self {
            Shape::Sphere { center, .. } => {
                (p - v(center)).try_normalize(0.0).unwrap_or_else(Vec3::y)
            }
            Shape::Ellipsoid { center, radii } => {
                let q = p - v(center);
                let r = v(radii);
                let r2 = r.component_mul(&r);
                let a = q.component_div(&r);
                let b = q.component_div(&r2);
                let k0 = a.norm();
                let k1 = b.norm();
                if k0 == 0.0 || k1 == 0.0 {
                    return Vec3::y();
                }
                let dk0 = q.component_div(&r2) / k0;
                let dk1 = q.component_div(&r2.component_mul(&r2)) / k1;
                ((2.0 * k0 - 1.0) * dk0 * k1 - k0 * (k0 - 1.0) * dk1) / (k1 * k1)
            }
            Shape::Box { center, half } => {
                let d = p - v(center);
                let q = d.abs() - v(half);
                let sign = d.map(|x| if x < 0.0 { -1.0 } else { 1.0 });
                let outside = q.sup(&Vec3::zeros());
                let len = outside.norm();
                if len > 0.0 {
                    (outside / len).component_mul(&sign)
                } else {
                    let axis = q.imax();
                    let mut n = Vec3::zeros();
                    n[axis] = sign[axis];
                    n
                }
            }
        }
    }

    /// Outward unit normal at a surface point.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        match *self {
            Shape::Sphere { .. } => self.sdf_gradient(p),
            Shape::Ellipsoid { center, radii } => {
                let r = v(radii);
                (p - v(center))
                    .component_div(&r.component_mul(&r))
                    .normalize()
            }
            Shape::Box { center, half } => {
                let d = p - v(center);
                let rel = d.component_div(&v(half)).abs();
                let axis = rel.imax();
                let mut n = Vec3::zeros();
                n[axis] = d[axis].signum();
                n
            }
        }
    }

    /// Smallest `t` in `[ray.near, ray.far]` where the ray enters the shape.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        let o = ray.origin;
        let d = ray.direction;
        match *self {
            Shape::Sphere { center, radius } => {
                quadric_entry(o - v(center), d, Vec3::repeat(radius), ray)
            }
            Shape::Ellipsoid { center, radii } => quadric_entry(o - v(center), d, v(radii), ray),
            Shape::Box { center, half } => {
                let c = v(center);
                let h = v(half);
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    let oa = o[a] - c[a];
                    if d[a] == 0.0 {
                        if oa.abs() > h[a] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (-h[a] - oa) / d[a];
                    let tb = (h[a] - oa) / d[a];
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                (t0 <= t1 && t0 >= ray.near && t0 <= ray.far).then_some(t0)
            }
        }
    }
}

/// Entry of a ray into the axis-aligned ellipsoid `|q / r| = 1`.
fn quadric_entry(q: Vec3, d: Vec3, r: Vec3, ray: &Ray) -> Option<f64> {
    let qs = q.component_div(&r);
    let ds = d.component_div(&r);
    let a = ds.dot(&ds);
    let b = qs.dot(&ds);
    let c = qs.dot(&qs) - 1.0;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    // numerically stable root pair
    let s = disc.sqrt();
    let qq = -(b + b.signum() * s);
    let (t0, t1) = if qq == 0.0 {
        (0.0, 0.0)
    } else {
        let r0 = qq / a;
        let r1 = c / qq;
        (r0.min(r1), r0.max(r1))
    };
    let t = if t0 >= ray.near { t0 } else { t1 };
    (t >= ray.near && t <= ray.far && t0 >= ray.near).then_some(t)
}

/// Surface pattern over the direction `(θ, φ)` from a component's center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    /// Cells of `period_deg` in both angles.
    Checker { period_deg: f64 },
    /// Bands of `period_deg` in azimuth.
    Stripes { period_deg: f64 },
    /// Linear blend from pole to pole.
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureFn {
    pub pattern: Pattern,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
    /// Edge sharpness of checker and stripe patterns; large values give
    /// hard edges.
    pub sharpness: f64,
}

/// Polar angle from `+y` and azimuth about it, both in radians; `φ = 0`
/// faces `-z`.
pub fn direction_angles(d: &Vec3) -> (f64, f64) {
    let n = d.try_normalize(0.0).unwrap_or_else(Vec3::y);
    let theta = n.y.clamp(-1.0, 1.0).acos();
    let phi = n.x.atan2(-n.z);
    (theta, phi)
}

impl TextureFn {
    /// Color for the direction with angles `(θ, φ)`.
    pub fn color(&self, theta: f64, phi: f64) -> [f64; 3] {
        let mix = match self.pattern {
            Pattern::Checker { period_deg } => {
                let k = PI / period_deg.to_radians();
                0.5 + 0.5 * (self.sharpness * (k * theta).sin() * (k * phi).sin()).tanh()
            }
            Pattern::Stripes { period_deg } => {
                let k = 2.0 * PI / period_deg.to_radians();
                0.5 + 0.5 * (self.sharpness * (k * phi).sin()).tanh()
            }
            Pattern::Gradient => theta / PI,
        };
        let mut c = [0.0; 3];
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = self.color_a[i] * (1.0 - mix) + self.color_b[i] * mix;
        }
        c
    }
}

/// Exact identity of a surface point, independent of the viewing camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceId {
    pub component: u8,
    pub theta: f64,
    pub phi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub rgb: [f64; 3],
    pub id: SurfaceId,
}

/// One or two shapes with an analytic texture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub components: Vec<Shape>,
    pub texture: TextureFn,
    pub beta: f64,
}

impl SyntheticScene {
    pub fn new(components: Vec<Shape>, texture: TextureFn) -> Self {
        SyntheticScene {
            components,
            texture,
            beta: DEFAULT_BETA,
        }
    }

    /// Union signed distance and the component attaining it.
    pub fn sdf(&self, p: &Vec3) -> (f64, usize) {
        self.components
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sdf(p), i))
            .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
    }

    pub fn sigma(&self, p: &Vec3) -> f64 {
        self.beta * (-self.sdf(p).0).max(0.0)
    }

    pub fn sigma_gradient(&self, p: &Vec3) -> Vec3 {
        let (d, i) = self.sdf(p);
        if d < 0.0 {
            -self.beta * self.components[i].sdf_gradient(p)
        } else {
            Vec3::zeros()
        }
    }

    pub fn surface_id(&self, component: usize, p: &Vec3) -> SurfaceId {
        let (theta, phi) = direction_angles(&(p - self.components[component].center()));
        SurfaceId {
            component: component as u8,
            theta,
            phi,
        }
    }

    /// Texture color of the nearest component, looked up along the
    /// direction from that component's center.
    pub fn color(&self, p: &Vec3) -> [f64; 3] {
        let (_, i) = self.sdf(p);
        let id = self.surface_id(i, p);
        self.texture.color(id.theta, id.phi)
    }

    /// First exact surface crossing along the ray.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let (t, i) = self
            .components
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.intersect(ray).map(|t| (t, i)))
            .fold(None, |best: Option<(f64, usize)>, c| match best {
                Some(b) if b.0 <= c.0 => Some(b),
                _ => Some(c),
            })?;
        let point = ray.at(t);
        let id = self.surface_id(i, &point);
        Some(Hit {
            t,
            point,
            normal: self.components[i].normal(&point),
            rgb: self.texture.color(id.theta, id.phi),
            id,
        })
    }
}

impl RadianceField for SyntheticScene {
    fn eval(&self, points: &Matrix, _dirs: &Matrix) -> Result<FieldSamples> {
        let n = points.rows();
        let mut sigma = Vec::with_capacity(n);
        let mut rgb = Vec::with_capacity(3 * n);
        for i in 0..n {
            let r = points.row(i);
            let p = Vec3::new(r[0], r[1], r[2]);
            sigma.push(self.sigma(&p));
            rgb.extend(self.color(&p));
        }
        Ok(FieldSamples {
            sigma,
            rgb: Matrix::from_vec(n, 3, rgb)?,
        })
    }

    fn density_gradient(&self, points: &Matrix, _dirs: &Matrix) -> Result<Matrix> {
        let n = points.rows();
        let mut g = Vec::with_capacity(3 * n);
        for i in 0..n {
            let r = points.row(i);
            g.extend(self.sigma_gradient(&Vec3::new(r[0], r[1], r[2])).iter());
        }
        Matrix::from_vec(n, 3, g)
    }
}
