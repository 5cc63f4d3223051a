use crate::camera::Camera;
use crate::error::Result;
use crate::field::{PixelSample, RenderedView};
use crate::Vec3;

use super::scene::{SurfaceId, SyntheticScene};

/// Closed-form render of a scene together with the surface identity of
/// every foreground pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleView {
    /// Opacity is exactly 0 or 1. Background pixels carry zero color,
    /// depth, normal and point.
    pub view: RenderedView,
    pub ids: Vec<Option<SurfaceId>>,
}

impl OracleView {
    pub fn foreground_fraction(&self) -> f64 {
        self.ids.iter().filter(|i| i.is_some()).count() as f64 / self.ids.len().max(1) as f64
    }
}

/// Ray-casts each pixel center against the exact surfaces.
pub fn oracle_render(scene: &SyntheticScene, camera: &Camera) -> Result<OracleView> {
    let (w, h) = (camera.width, camera.height);
    let mut samples = Vec::with_capacity(w * h);
    let mut ids = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let ray = camera.pixel_ray(u, v, 0.0, f64::MAX)?;
            match scene.intersect(&ray) {
                Some(hit) => {
                    let depth = hit.t * camera.axial_factor(&ray.direction);
                    let point = camera.backproject((u as f64 + 0.5, v as f64 + 0.5), depth)?;
                    samples.push(PixelSample {
                        rgb: hit.rgb,
                        opacity: 1.0,
                        depth,
                        normal: hit.normal,
                        point,
                    });
                    ids.push(Some(hit.id));
                }
                None => {
                    samples.push(PixelSample {
                        rgb: [0.0; 3],
                        opacity: 0.0,
                        depth: 0.0,
                        normal: Vec3::zeros(),
                        point: Vec3::zeros(),
                    });
                    ids.push(None);
                }
            }
        }
    }
    Ok(OracleView {
        view: RenderedView::from_pixels(camera, &samples)?,
        ids,
    })
}
