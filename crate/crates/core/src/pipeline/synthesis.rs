use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::{render_pixels, RadianceField, RenderSettings, FOREGROUND_THRESHOLD};
use crate::image::Image;
use crate::texture::{CanonicalMap, CanonicalTexture};
use crate::Vec3;

/// Working-set estimate per rendered pixel: ray, pixel sample, uv and
/// output color.
pub const PIXEL_BYTES: usize = 256;
/// Working-set estimate per quadrature sample in flight: position,
/// direction, density, color, interval and decoder activations.
pub const SAMPLE_BYTES: usize = 1024;

/// Estimated peak bytes for rendering `pixels` pixels in one call.
pub fn synthesis_bytes(pixels: usize, settings: &RenderSettings) -> usize {
    let in_flight = pixels.min(settings.rays_per_batch());
    pixels * PIXEL_BYTES + in_flight * settings.n_samples * SAMPLE_BYTES
}

/// Everything `synthesize_view` needs besides the camera: a frozen field,
/// that object's canonical map and a texture.
pub struct Synthesizer<'a> {
    pub field: &'a dyn RadianceField,
    pub map: &'a dyn CanonicalMap,
    pub texture: &'a CanonicalTexture,
    pub settings: RenderSettings,
}

impl Synthesizer<'_> {
    /// Colors for pixel indices `y·W + x`; background pixels are black.
    pub fn pixels(&self, camera: &Camera, pixels: &[usize]) -> Result<Vec<[f64; 3]>> {
        let samples = render_pixels(self.field, camera, &self.settings, pixels, false)?;
        let fg: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].opacity > FOREGROUND_THRESHOLD)
            .collect();
        let mut out = vec![[0.0; 3]; pixels.len()];
        if fg.is_empty() {
            return Ok(out);
        }
        let points: Vec<Vec3> = fg.iter().map(|&i| samples[i].point).collect();
        let uv = self.map.canonical(&points)?;
        if uv.len() != fg.len() {
            return Err(Error::Contract(format!(
                "canonical map returned {} uv for {} points",
                uv.len(),
                fg.len()
            )));
        }
        for (&i, uv) in fg.iter().zip(uv) {
            out[i] = self.texture.color(uv);
        }
        Ok(out)
    }

    pub fn synthesize_view(&self, camera: &Camera) -> Result<Image> {
        self.tile_render(camera, 1, None)
    }

    /// Render `tiles` horizontal bands independently and stitch them.
    /// With `memory_cap` set, any band whose estimated working set exceeds
    /// the cap fails before rendering starts.
    pub fn tile_render(
        &self,
        camera: &Camera,
        tiles: usize,
        memory_cap: Option<usize>,
    ) -> Result<Image> {
        let bands = row_bands(camera.height, tiles)?;
        if let Some(cap) = memory_cap {
            for &(y0, y1) in &bands {
                let needed = synthesis_bytes((y1 - y0) * camera.width, &self.settings);
                if needed > cap {
                    return Err(Error::MemoryBudget { needed, cap });
                }
            }
        }
        let mut out = Image::new(camera.width, camera.height, 3);
        for (y0, y1) in bands {
            let pixels: Vec<usize> = (y0 * camera.width..y1 * camera.width).collect();
            for (i, c) in pixels.iter().zip(self.pixels(camera, &pixels)?) {
                out.at_mut(*i).copy_from_slice(&c);
            }
        }
        Ok(out)
    }
}

/// `tiles` contiguous row ranges covering `0..height`, sizes differing by
/// at most one.
pub fn row_bands(height: usize, tiles: usize) -> Result<Vec<(usize, usize)>> {
    if tiles == 0 || tiles > height {
        return Err(Error::Contract(format!(
            "cannot split {height} rows into {tiles} tiles"
        )));
    }
    let (base, extra) = (height / tiles, height % tiles);
    let mut y = 0;
    Ok((0..tiles)
        .map(|t| {
            let h = base + usize::from(t < extra);
            let band = (y, y + h);
            y += h;
            band
        })
        .collect())
}

/// Render the texture of one object onto another object's geometry.
pub fn transfer(
    texture: &CanonicalTexture,
    target_field: &dyn RadianceField,
    target_map: &dyn CanonicalMap,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<Image> {
    Synthesizer {
        field: target_field,
        map: target_map,
        texture,
        settings: *settings,
    }
    .synthesize_view(camera)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{oracle_render, Pattern, Shape, SyntheticScene, TextureFn};
    use crate::texture::extract_texture_gt;

    struct Angles;

    impl CanonicalMap for Angles {
        fn canonical(&self, points: &[Vec3]) -> Result<Vec<[f64; 2]>> {
            Ok(points
                .iter()
                .map(|p| {
                    let (t, f) = crate::synthetic::direction_angles(&p.normalize());
                    [t, f]
                })
                .collect())
        }
    }

    fn scene() -> SyntheticScene {
        SyntheticScene::new(
            vec![Shape::Sphere {
                center: [0.0; 3],
                radius: 0.7,
            }],
            TextureFn {
                pattern: Pattern::Checker { period_deg: 30.0 },
                color_a: [0.9, 0.2, 0.1],
                color_b: [0.1, 0.3, 0.8],
                sharpness: 3.0,
            },
        )
    }

    #[test]
    fn bands_partition_rows() {
        assert_eq!(row_bands(10, 4).unwrap(), [(0, 3), (3, 6), (6, 8), (8, 10)]);
        assert_eq!(row_bands(5, 1).unwrap(), [(0, 5)]);
        assert!(row_bands(3, 4).is_err());
        assert!(row_bands(3, 0).is_err());
    }

    #[test]
    fn tiled_equals_monolithic_and_cap_is_enforced() {
        let s = scene();
        let cam = Camera::orbit(0.4, 0.2, 2.7, (24, 20), 30.0).unwrap();
        let settings = RenderSettings::new(64, 0.0, 6.0);
        let view = oracle_render(&s, &cam).unwrap().view;
        let tex = extract_texture_gt(&view.rgb, &view, &Angles).unwrap();
        let syn = Synthesizer {
            field: &s,
            map: &Angles,
            texture: &tex,
            settings,
        };
        let mono = syn.synthesize_view(&cam).unwrap();
        for tiles in [1, 3, 4, 20] {
            assert_eq!(syn.tile_render(&cam, tiles, None).unwrap().data, mono.data);
        }
        let cap = synthesis_bytes(24 * 5, &settings);
        assert!(matches!(
            syn.tile_render(&cam, 1, Some(cap)),
            Err(Error::MemoryBudget { .. })
        ));
        assert_eq!(syn.tile_render(&cam, 4, Some(cap)).unwrap().data, mono.data);
    }

    #[test]
    fn out_of_frustum_camera_gives_black() {
        let s = scene();
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, -2.7),
            Vec3::new(0.0, 0.0, -5.0),
            Vec3::y(),
            (8, 8),
            30.0,
        )
        .unwrap();
        let view = oracle_render(&s, &Camera::orbit(0.0, 0.0, 2.7, (8, 8), 30.0).unwrap())
            .unwrap()
            .view;
        let tex = extract_texture_gt(&view.rgb, &view, &Angles).unwrap();
        let img = transfer(&tex, &s, &Angles, &cam, &RenderSettings::new(16, 0.0, 6.0)).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }
}
