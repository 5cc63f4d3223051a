use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

use super::kdtree::KdTree;
use super::nni::{nni_color, DEFAULT_K};

/// Where a texture entry's color came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    GtPixel,
    ViewRender,
    Edit,
}

impl Source {
    pub fn tag(self) -> u8 {
        match self {
            Source::GtPixel => 0,
            Source::ViewRender => 1,
            Source::Edit => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Source::GtPixel),
            1 => Some(Source::ViewRender),
            2 => Some(Source::Edit),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureEntry {
    pub uv: [f64; 2],
    pub rgb: [f64; 3],
    pub source: Source,
}

/// Axis-aligned uv rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

/// Relative margin added around the entry bounding box in [`Frame`]s.
pub const FRAME_MARGIN: f64 = 0.01;

impl Frame {
    pub fn extent(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        e[0].hypot(e[1])
    }

    /// Grow by `FRAME_MARGIN` of the extent on every side; degenerate axes
    /// get a unit extent.
    pub fn with_margin(&self) -> Frame {
        let e = self.extent();
        let pad = |i: usize| if e[i] > 0.0 { e[i] * FRAME_MARGIN } else { 0.5 };
        Frame {
            min: [self.min[0] - pad(0), self.min[1] - pad(1)],
            max: [self.max[0] + pad(0), self.max[1] + pad(1)],
        }
    }

    /// uv → `[0, 1]²`.
    pub fn normalize(&self, uv: [f64; 2]) -> [f64; 2] {
        let e = self.extent();
        [(uv[0] - self.min[0]) / e[0], (uv[1] - self.min[1]) / e[1]]
    }

    pub fn denormalize(&self, n: [f64; 2]) -> [f64; 2] {
        let e = self.extent();
        [self.min[0] + n[0] * e[0], self.min[1] + n[1] * e[1]]
    }

    fn approx_eq(&self, other: &Frame) -> bool {
        let tol = 1e-9 * self.diagonal().max(1e-300);
        (0..2).all(|i| {
            (self.min[i] - other.min[i]).abs() <= tol && (self.max[i] - other.max[i]).abs() <= tol
        })
    }
}

/// How edit entries interact with the rest of the texture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditRule {
    /// Near an edit entry, interpolate over edit entries only.
    #[default]
    Priority,
    /// Treat edit entries like any other entry.
    PlainUnion,
}

#[derive(Clone, Debug, PartialEq)]
struct EditOverlay {
    /// Indices of edit entries within `entries`.
    members: Vec<usize>,
    tree: KdTree,
    /// Mean nearest-neighbor distance among non-edit entries.
    spacing: f64,
}

/// Canonical-coordinate texture: colored uv samples behind a K-d tree.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalTexture {
    entries: Vec<TextureEntry>,
    tree: KdTree,
    /// Bounding box of the non-edit entries (of all entries when every
    /// entry is an edit).
    bbox: Frame,
    overlay: Option<EditOverlay>,
    pub rule: EditRule,
    /// Neighbors per query.
    pub k: usize,
}

fn bbox_of<'a>(uvs: impl Iterator<Item = &'a [f64; 2]>) -> Option<Frame> {
    let mut f: Option<Frame> = None;
    for uv in uvs {
        let g = f.get_or_insert(Frame { min: *uv, max: *uv });
        for i in 0..2 {
            g.min[i] = g.min[i].min(uv[i]);
            g.max[i] = g.max[i].max(uv[i]);
        }
    }
    f
}

impl CanonicalTexture {
    /// Index the entries. Fails on an empty list or non-finite values.
    pub fn build(entries: Vec<TextureEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyTexture("no entries to index".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if !(e.uv.iter().all(|v| v.is_finite()) && e.rgb.iter().all(|v| v.is_finite())) {
                return Err(Error::Contract(format!("texture entry {i} is not finite")));
            }
        }
        let tree = KdTree::build(entries.iter().map(|e| e.uv).collect());
        let base = || {
            entries
                .iter()
                .filter(|e| e.source != Source::Edit)
                .map(|e| &e.uv)
        };
        let bbox = bbox_of(base())
            .or_else(|| bbox_of(entries.iter().map(|e| &e.uv)))
            .expect("entries are non-empty");
        let members: Vec<usize> = (0..entries.len())
            .filter(|&i| entries[i].source == Source::Edit)
            .collect();
        let overlay = if members.is_empty() {
            None
        } else {
            let tree_e = KdTree::build(members.iter().map(|&i| entries[i].uv).collect());
            let base_uv: Vec<[f64; 2]> = base().copied().collect();
            Some(EditOverlay {
                members,
                tree: tree_e,
                spacing: mean_nn_spacing(&base_uv),
            })
        };
        Ok(CanonicalTexture {
            entries,
            tree,
            bbox,
            overlay,
            rule: EditRule::default(),
            k: DEFAULT_K,
        })
    }

    pub fn entries(&self) -> &[TextureEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<TextureEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bbox(&self) -> Frame {
        self.bbox
    }

    /// Normalization frame for rasterization and edits.
    pub fn frame(&self) -> Frame {
        self.bbox.with_margin()
    }

    pub fn count(&self, source: Source) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }

    /// `k` nearest entries as `(entry, distance)`, ascending.
    pub fn knn(&self, uv: [f64; 2], k: usize) -> Vec<(&TextureEntry, f64)> {
        self.tree
            .nearest(uv, k)
            .into_iter()
            .map(|(i, d)| (&self.entries[i], d))
            .collect()
    }

    /// Interpolated color at `uv` using `self.k` neighbors and the edit
    /// rule.
    pub fn color(&self, uv: [f64; 2]) -> [f64; 3] {
        let k = self.k.max(1);
        if let (Some(ov), EditRule::Priority) = (&self.overlay, self.rule) {
            let near = ov.tree.nearest(uv, k);
            if near.first().is_some_and(|&(_, d)| d <= ov.spacing) {
                let n: Vec<([f64; 3], f64)> = near
                    .into_iter()
                    .map(|(i, d)| (self.entries[ov.members[i]].rgb, d))
                    .collect();
                return nni_color(&n);
            }
        }
        let n: Vec<([f64; 3], f64)> = self
            .tree
            .nearest(uv, k)
            .into_iter()
            .map(|(i, d)| (self.entries[i].rgb, d))
            .collect();
        nni_color(&n)
    }
}

/// Mean distance from each point to its nearest other point; 0 for fewer
/// than two points.
pub fn mean_nn_spacing(points: &[[f64; 2]]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let tree = KdTree::build(points.to_vec());
    let total: f64 = points.iter().map(|&p| tree.nearest(p, 2)[1].1).sum();
    total / points.len() as f64
}

/// Union of a ground-truth texture with optional view textures; the index
/// is rebuilt over the combined entries.
pub fn merge(gt: &CanonicalTexture, views: Option<&CanonicalTexture>) -> Result<CanonicalTexture> {
    let mut entries = gt.entries.clone();
    if let Some(v) = views {
        entries.extend_from_slice(&v.entries);
    }
    let mut out = CanonicalTexture::build(entries)?;
    out.rule = gt.rule;
    out.k = gt.k;
    Ok(out)
}

/// RGBA edit image laid over a texture's normalization frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EditLayer {
    pub image: Image,
    pub frame: Frame,
}

impl EditLayer {
    /// Fully transparent layer sized `w × h` over `frame`.
    pub fn blank(width: usize, height: usize, frame: Frame) -> Self {
        EditLayer {
            image: Image::new(width, height, 4),
            frame,
        }
    }

    /// uv of the center of edit pixel `(x, y)`; rows run along +v.
    pub fn pixel_uv(&self, x: usize, y: usize) -> [f64; 2] {
        let n = [
            (x as f64 + 0.5) / self.image.width as f64,
            (y as f64 + 0.5) / self.image.height as f64,
        ];
        self.frame.denormalize(n)
    }
}

/// Add one edit entry per pixel with positive alpha.
pub fn apply_edit(texture: &CanonicalTexture, edit: &EditLayer) -> Result<CanonicalTexture> {
    if edit.image.channels != 4 {
        return Err(Error::Contract(format!(
            "edit image has {} channels, need 4",
            edit.image.channels
        )));
    }
    if !edit.frame.approx_eq(&texture.frame()) {
        return Err(Error::Contract(format!(
            "edit frame {:?} does not match texture frame {:?}",
            edit.frame,
            texture.frame()
        )));
    }
    let mut entries = texture.entries.clone();
    for y in 0..edit.image.height {
        for x in 0..edit.image.width {
            let px = edit.image.pixel(x, y);
            if px[3] > 0.0 {
                entries.push(TextureEntry {
                    uv: edit.pixel_uv(x, y),
                    rgb: [px[0], px[1], px[2]],
                    source: Source::Edit,
                });
            }
        }
    }
    let mut out = CanonicalTexture::build(entries)?;
    out.rule = texture.rule;
    out.k = texture.k;
    Ok(out)
}

/// Binned view of a texture: mean color per texel and a hole mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub image: Image,
    /// `true` where no entry landed.
    pub holes: Vec<bool>,
}

impl Raster {
    pub fn hole_fraction(&self) -> f64 {
        self.holes.iter().filter(|&&h| h).count() as f64 / self.holes.len().max(1) as f64
    }
}

/// Bin entries into a `width × height` grid over [`CanonicalTexture::frame`],
/// averaging collisions. For inspection only.
pub fn rasterize(texture: &CanonicalTexture, width: usize, height: usize) -> Result<Raster> {
    if width == 0 || height == 0 {
        return Err(Error::Contract("raster size must be positive".into()));
    }
    let frame = texture.frame();
    let mut sum = vec![[0.0f64; 3]; width * height];
    let mut count = vec![0usize; width * height];
    for e in &texture.entries {
        let n = frame.normalize(e.uv);
        let x = ((n[0] * width as f64).floor().max(0.0) as usize).min(width - 1);
        let y = ((n[1] * height as f64).floor().max(0.0) as usize).min(height - 1);
        let i = y * width + x;
        for c in 0..3 {
            sum[i][c] += e.rgb[c];
        }
        count[i] += 1;
    }
    let mut image = Image::new(width, height, 3);
    for i in 0..width * height {
        if count[i] > 0 {
            for c in 0..3 {
                image.at_mut(i)[c] = sum[i][c] / count[i] as f64;
            }
        }
    }
    Ok(Raster {
        image,
        holes: count.iter().map(|&c| c == 0).collect(),
    })
}
