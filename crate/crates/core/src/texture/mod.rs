//! Canonical textures: colored uv samples in a K-d tree, queried by
//! inverse-distance interpolation over the nearest entries.

pub mod extract;
pub mod io;
pub mod kdtree;
pub mod nni;
pub mod store;

pub use extract::{extract_texture_gt, extract_texture_views, synthesize_from_view, CanonicalMap};
pub use io::{
    decode_texture, encode_texture, load_texture, save_texture, TEXTURE_MAGIC, TEXTURE_VERSION,
};
pub use kdtree::{linear_scan, KdTree, LEAF_SIZE};
pub use nni::{nni_color, nni_weights, DEFAULT_K, EXACT_HIT};
pub use store::{
    apply_edit, mean_nn_spacing, merge, rasterize, CanonicalTexture, EditLayer, EditRule, Frame,
    Raster, Source, TextureEntry, FRAME_MARGIN,
};
