use crate::error::{Error, Result};
use crate::field::RenderedView;
use crate::image::Image;
use crate::Vec3;

use super::store::{CanonicalTexture, Source, TextureEntry};

/// Map from surface points of one object to canonical coordinates.
pub trait CanonicalMap {
    fn canonical(&self, points: &[Vec3]) -> Result<Vec<[f64; 2]>>;
}

fn foreground_uv(
    view: &RenderedView,
    map: &dyn CanonicalMap,
) -> Result<(Vec<usize>, Vec<[f64; 2]>)> {
    let fg: Vec<usize> = view.foreground();
    let points: Vec<Vec3> = fg.iter().map(|&i| view.point(i)).collect();
    let uv = if points.is_empty() {
        Vec::new()
    } else {
        map.canonical(&points)?
    };
    if uv.len() != fg.len() {
        return Err(Error::Contract(format!(
            "canonical map returned {} uv for {} points",
            uv.len(),
            fg.len()
        )));
    }
    Ok((fg, uv))
}

fn entries_for(
    view: &RenderedView,
    image: &Image,
    map: &dyn CanonicalMap,
    source: Source,
) -> Result<Vec<TextureEntry>> {
    let (fg, uv) = foreground_uv(view, map)?;
    Ok(fg
        .iter()
        .zip(uv)
        .map(|(&i, uv)| {
            let c = image.at(i);
            TextureEntry {
                uv,
                rgb: [c[0], c[1], c[2]],
                source,
            }
        })
        .collect())
}

/// Texture of the pixels of `image` over the foreground of `view`.
pub fn extract_texture_gt(
    image: &Image,
    view: &RenderedView,
    map: &dyn CanonicalMap,
) -> Result<CanonicalTexture> {
    if (image.width, image.height) != (view.rgb.width, view.rgb.height) || image.channels < 3 {
        return Err(Error::Contract(format!(
            "image {}x{}x{} does not match view {}x{}",
            image.width, image.height, image.channels, view.rgb.width, view.rgb.height
        )));
    }
    CanonicalTexture::build(entries_for(view, image, map, Source::GtPixel)?)
}

/// Union of the rendered colors of every view.
pub fn extract_texture_views(
    views: &[RenderedView],
    map: &dyn CanonicalMap,
) -> Result<CanonicalTexture> {
    let mut entries = Vec::new();
    for v in views {
        entries.extend(entries_for(v, &v.rgb, map, Source::ViewRender)?);
    }
    CanonicalTexture::build(entries)
}

/// Color the foreground pixels of `view` from `texture`; background stays
/// black.
pub fn synthesize_from_view(
    texture: &CanonicalTexture,
    view: &RenderedView,
    map: &dyn CanonicalMap,
) -> Result<Image> {
    let (fg, uv) = foreground_uv(view, map)?;
    let mut out = Image::new(view.rgb.width, view.rgb.height, 3);
    for (&i, uv) in fg.iter().zip(uv) {
        out.at_mut(i).copy_from_slice(&texture.color(uv));
    }
    Ok(out)
}
