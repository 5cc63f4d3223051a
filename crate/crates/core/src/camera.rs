//! Pinhole cameras and rays.
//!
//! Camera frame: x right, y down, z forward. `rotation` maps camera-frame
//! vectors into the world and `translation` is the camera origin in world
//! units. Pixel `(u, v)` covers `[u, u+1) × [v, v+1)` with its center at
//! `(u + 0.5, v + 0.5)`; [`Camera::project`] returns continuous coordinates
//! in that convention.

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    rotation: Matrix3<f64>,
    translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// On-disk layout: `rotation` is row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJson {
    rotation: [f64; 9],
    translation: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        Camera::new(
            Matrix3::from_row_slice(&j.rotation),
            Vec3::from(j.translation),
            (j.fx, j.fy),
            (j.cx, j.cy),
            (j.width, j.height),
        )
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        CameraJson {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

/// A ray `origin + t·direction` restricted to `t ∈ [near, far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, near: f64, far: f64) -> Result<Self> {
        let norm = direction.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Contract(format!("ray direction has norm {norm}")));
        }
        if !(0.0 <= near && near < far) {
            return Err(Error::Contract(format!("ray bounds [{near}, {far}]")));
        }
        Ok(Ray {
            origin,
            direction: direction / norm,
            near,
            far,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Intersect `[near, far]` with the axis-aligned cube `[-half, half]³`.
    /// `None` when the ray misses it.
    pub fn clip_to_cube(&self, half: f64) -> Option<Ray> {
        let (mut t0, mut t1) = (self.near, self.far);
        for axis in 0..3 {
            let o = self.origin[axis];
            let d = self.direction[axis];
            if d.abs() < 1e-300 {
                if o < -half || o > half {
                    return None;
                }
                continue;
            }
            let a = (-half - o) / d;
            let b = (half - o) / d;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t0 < t1).then_some(Ray {
            near: t0,
            far: t1,
            ..*self
        })
    }
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vec3,
        (fx, fy): (f64, f64),
        (cx, cy): (f64, f64),
        (width, height): (usize, usize),
    ) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if !(err <= ORTHONORMAL_TOL) || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "rotation is not a proper orthonormal matrix (|RᵀR - I| = {err:e})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Contract("non-finite camera translation".into()));
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Contract(format!("focal lengths ({fx}, {fy})")));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::Contract(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Camera {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`. `fov_deg` is the horizontal
    /// field of view; pixels are square and the principal point is the
    /// image center.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        (width, height): (usize, usize),
        fov_deg: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Contract("look_at eye coincides with target".into()))?;
        let right = forward.cross(&up).try_normalize(1e-9).ok_or_else(|| {
            Error::Contract("look_at up vector is parallel to the view axis".into())
        })?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::Contract(format!("field of view {fov_deg}°")));
        }
        let f = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        Camera::new(
            rotation,
            eye,
            (f, f),
            (0.5 * width as f64, 0.5 * height as f64),
            (width, height),
        )
    }

    /// Camera on a sphere of `radius` around the origin. Azimuth 0 and
    /// elevation 0 is the front pose at `(0, 0, -radius)`; positive azimuth
    /// swings toward `+x`, positive elevation toward `+y`.
    pub fn orbit(
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        resolution: (usize, usize),
        fov_deg: f64,
    ) -> Result<Self> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let eye = radius * Vec3::new(az.sin() * el.cos(), el.sin(), -az.cos() * el.cos());
        Camera::look_at(eye, Vec3::zeros(), Vec3::y(), resolution, fov_deg)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// Camera origin in world coordinates.
    pub fn origin(&self) -> Vec3 {
        self.translation
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame direction through continuous pixel coordinates with
    /// unit z component.
    fn camera_dir(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Unit world direction through continuous pixel coordinates.
    pub fn direction_at(&self, u: f64, v: f64) -> Vec3 {
        (self.rotation * self.camera_dir(u, v)).normalize()
    }

    /// Ratio between distance along the optical axis and distance along a
    /// world-space unit `direction`.
    pub fn axial_factor(&self, direction: &Vec3) -> f64 {
        self.forward().dot(direction)
    }

    /// One ray through the center of each integer pixel `(u, v)`.
    pub fn generate_rays(
        &self,
        pixels: &[(usize, usize)],
        near: f64,
        far: f64,
    ) -> Result<Vec<Ray>> {
        pixels
            .iter()
            .map(|&(u, v)| {
                if u >= self.width || v >= self.height {
                    return Err(Error::Contract(format!(
                        "pixel ({u}, {v}) outside {}x{}",
                        self.width, self.height
                    )));
                }
                let d = self.direction_at(u as f64 + 0.5, v as f64 + 0.5);
                Ray::new(self.translation, d, near, far)
            })
            .collect()
    }

    /// Ray through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: usize, v: usize, near: f64, far: f64) -> Result<Ray> {
        Ok(self.generate_rays(&[(u, v)], near, far)?[0])
    }

    /// Continuous pixel coordinates and optical-axis depth of a world point.
    pub fn project(&self, point: &Vec3) -> Result<((f64, f64), f64)> {
        let pc = self.rotation.transpose() * (point - self.translation);
        if !(pc.z > 0.0) {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        let u = self.fx * pc.x / pc.z + self.cx;
        let v = self.fy * pc.y / pc.z + self.cy;
        Ok(((u, v), pc.z))
    }

    /// World point at optical-axis `depth` behind continuous pixel
    /// coordinates `(u, v)`.
    pub fn backproject(&self, (u, v): (f64, f64), depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::Contract(format!("back-projection depth {depth}")));
        }
        Ok(self.translation + self.rotation * (self.camera_dir(u, v) * depth))
    }

    /// 4×4 world-from-camera extrinsic, row-major (16 values), followed by
    /// the intrinsic matrix normalized by image size (9 values).
    pub fn flatten(&self) -> [f64; 25] {
        let mut out = [0.0; 25];
        let mut ext = Matrix4::identity();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        ext.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&self.translation);
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = ext[(r, c)];
            }
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let k = [
            self.fx / w,
            0.0,
            self.cx / w,
            0.0,
            self.fy / h,
            self.cy / h,
            0.0,
            0.0,
            1.0,
        ];
        out[16..].copy_from_slice(&k);
        out
    }

    /// Inverse of [`Camera::flatten`] for a known image size.
    pub fn unflatten(v: &[f64], width: usize, height: usize) -> Result<Self> {
        if v.len() != 25 {
            return Err(Error::shape(
                "unflatten",
                format!("{} values, expected 25", v.len()),
            ));
        }
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vec3::new(v[3], v[7], v[11]);
        let (w, h) = (width as f64, height as f64);
        Camera::new(
            rotation,
            translation,
            (v[16] * w, v[20] * h),
            (v[18] * w, v[21] * h),
            (width, height),
        )
    }

    /// Same pose and field of view at a different resolution.
    pub fn rescaled(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera::new(
            self.rotation,
            self.translation,
            (self.fx * sx, self.fy * sy),
            (self.cx * sx, self.cy * sy),
            (width, height),
        )
    }
}

/// Tags of the five canonical dataset poses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseTag {
    Front,
    Left,
    Right,
    Top,
    Bottom,
}

impl PoseTag {
    pub const ALL: [PoseTag; 5] = [
        PoseTag::Front,
        PoseTag::Left,
        PoseTag::Right,
        PoseTag::Top,
        PoseTag::Bottom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoseTag::Front => "front",
            PoseTag::Left => "left",
            PoseTag::Right => "right",
            PoseTag::Top => "top",
            PoseTag::Bottom => "bottom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedCamera {
    pub tag: PoseTag,
    pub camera: Camera,
}

/// Front, left, right, top and bottom cameras at equal radius, all aimed at
/// the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FivePoseSet {
    pub cameras: Vec<TaggedCamera>,
}

impl FivePoseSet {
    pub fn get(&self, tag: PoseTag) -> &Camera {
        &self
            .cameras
            .iter()
            .find(|c| c.tag == tag)
            .expect("five-pose set holds every tag")
            .camera
    }

    pub fn iter(&self) -> impl Iterator<Item = (PoseTag, &Camera)> {
        self.cameras.iter().map(|c| (c.tag, &c.camera))
    }
}

/// Front sits at `(0, 0, -radius)` looking along `+z`; left and right sit on
/// `+x` and `-x`; top and bottom on `±y` use `+z` as their up hint.
pub fn canonical_five_poses(
    radius: f64,
    resolution: (usize, usize),
    fov_deg: f64,
) -> Result<FivePoseSet> {
    if !(radius > 0.0) {
        return Err(Error::Contract(format!("pose radius {radius}")));
    }
    let eye_up = |tag| match tag {
        PoseTag::Front => (Vec3::new(0.0, 0.0, -radius), Vec3::y()),
        PoseTag::Left => (Vec3::new(radius, 0.0, 0.0), Vec3::y()),
        PoseTag::Right => (Vec3::new(-radius, 0.0, 0.0), Vec3::y()),
        PoseTag::Top => (Vec3::new(0.0, radius, 0.0), Vec3::z()),
        PoseTag::Bottom => (Vec3::new(0.0, -radius, 0.0), Vec3::z()),
    };
    let cameras = PoseTag::ALL
        .iter()
        .map(|&tag| {
            let (eye, up) = eye_up(tag);
            Ok(TaggedCamera {
                tag,
                camera: Camera::look_at(eye, Vec3::zeros(), up, resolution, fov_deg)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FivePoseSet { cameras })
}
