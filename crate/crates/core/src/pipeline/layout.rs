//! On-disk layout of rendered multi-view datasets:
//!
//! ```text
//! <root>/manifest.json
//! <root>/object_0000/latent.f32
//! <root>/object_0000/front/{rgb.png, depth.f32, normals.f32, points.f32, opacity.f32, camera.json}
//! ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, PoseTag};
use crate::error::{Error, Result};
use crate::field::RenderedView;
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedObject {
    /// Row of the object in the Stage-1 latent table.
    pub index: usize,
    pub latent: Vec<f64>,
    pub views: Vec<(PoseTag, RenderedView)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedDataset {
    pub objects: Vec<RenderedObject>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    latent_dim: usize,
    objects: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    index: usize,
    dir: String,
    views: Vec<PoseTag>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewMeta {
    tag: PoseTag,
    latent_index: Option<usize>,
    camera: Camera,
}

const MANIFEST_FORMAT: &str = "teglo-rendered-dataset";
const MANIFEST_VERSION: u32 = 1;

pub fn object_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("object_{index:04}"))
}

pub fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!("{} bytes is not a whole number of f32", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Write one view's files into `dir`.
pub fn write_view(dir: &Path, tag: PoseTag, view: &RenderedView) -> Result<()> {
    create_dir(dir)?;
    view.rgb.save_png(&dir.join("rgb.png"))?;
    view.depth.write_f32(&dir.join("depth.f32"))?;
    view.normals.write_f32(&dir.join("normals.f32"))?;
    view.points.write_f32(&dir.join("points.f32"))?;
    view.opacity.write_f32(&dir.join("opacity.f32"))?;
    write_json(
        &dir.join("camera.json"),
        &ViewMeta {
            tag,
            latent_index: view.latent_index,
            camera: view.camera.clone(),
        },
    )
}

pub fn read_view(dir: &Path) -> Result<(PoseTag, RenderedView)> {
    let meta: ViewMeta = read_json(&dir.join("camera.json"))?;
    let (w, h) = (meta.camera.width, meta.camera.height);
    let view = RenderedView {
        rgb: Image::load_png(&dir.join("rgb.png"), 3)?,
        depth: Image::read_f32(&dir.join("depth.f32"), w, h, 1)?,
        opacity: Image::read_f32(&dir.join("opacity.f32"), w, h, 1)?,
        normals: Image::read_f32(&dir.join("normals.f32"), w, h, 3)?,
        points: Image::read_f32(&dir.join("points.f32"), w, h, 3)?,
        camera: meta.camera,
        latent_index: meta.latent_index,
    };
    if (view.rgb.width, view.rgb.height) != (w, h) {
        return Err(Error::format(
            &dir.join("rgb.png"),
            format!("expected {w}x{h}"),
        ));
    }
    Ok((meta.tag, view))
}

impl RenderedDataset {
    pub fn save(&self, root: &Path) -> Result<()> {
        create_dir(root)?;
        let mut entries = Vec::with_capacity(self.objects.len());
        for o in &self.objects {
            let dir = object_dir(root, o.index);
            create_dir(&dir)?;
            write_f32(&dir.join("latent.f32"), &o.latent)?;
            for (tag, view) in &o.views {
                write_view(&dir.join(tag.name()), *tag, view)?;
            }
            entries.push(ManifestEntry {
                index: o.index,
                dir: format!("object_{:04}", o.index),
                views: o.views.iter().map(|(t, _)| *t).collect(),
            });
        }
        write_json(
            &root.join("manifest.json"),
            &Manifest {
                format: MANIFEST_FORMAT.into(),
                version: MANIFEST_VERSION,
                latent_dim: self.objects.first().map_or(0, |o| o.latent.len()),
                objects: entries,
            },
        )
    }

    /// Latents come back at `f32` precision.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let manifest: Manifest = read_json(&path)?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(Error::format(
                &path,
                format!("{} v{}", manifest.format, manifest.version),
            ));
        }
        let mut objects = Vec::with_capacity(manifest.objects.len());
        for e in manifest.objects {
            let dir = root.join(&e.dir);
            let latent = read_f32(&dir.join("latent.f32"))?;
            if latent.len() != manifest.latent_dim {
                return Err(Error::format(
                    &dir.join("latent.f32"),
                    format!("{} values", latent.len()),
                ));
            }
            let views = e
                .views
                .iter()
                .map(|t| read_view(&dir.join(t.name())))
                .collect::<Result<Vec<_>>>()?;
            objects.push(RenderedObject {
                index: e.index,
                latent,
                views,
            });
        }
        Ok(RenderedDataset { objects })
    }
}
