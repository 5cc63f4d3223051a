//! Texture file: `"TGLT"`, `u32` version, `u64` entry count, bounding box
//! as four `f64` (min u, min v, max u, max v), then per entry uv as two
//! `f64`, rgb as three `f32` and a `u8` source tag. Little-endian.
//! Colors are stored at `f32` precision.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::store::{CanonicalTexture, Source, TextureEntry};

pub const TEXTURE_MAGIC: &[u8; 4] = b"TGLT";
pub const TEXTURE_VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8 + 32;
const RECORD: usize = 16 + 12 + 1;

pub fn encode_texture(texture: &CanonicalTexture) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + RECORD * texture.len());
    out.extend_from_slice(TEXTURE_MAGIC);
    out.extend_from_slice(&TEXTURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(texture.len() as u64).to_le_bytes());
    let b = texture.bbox();
    for v in [b.min[0], b.min[1], b.max[0], b.max[1]] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for e in texture.entries() {
        out.extend_from_slice(&e.uv[0].to_le_bytes());
        out.extend_from_slice(&e.uv[1].to_le_bytes());
        for c in e.rgb {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.push(e.source.tag());
    }
    out
}

pub fn decode_texture(bytes: &[u8], path: &Path) -> Result<CanonicalTexture> {
    let bad = |detail: String| Error::format(path, detail);
    if bytes.len() < HEADER || &bytes[0..4] != TEXTURE_MAGIC {
        return Err(bad("not a texture file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != TEXTURE_VERSION {
        return Err(bad(format!("unsupported texture version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let expected = count
        .checked_mul(RECORD)
        .and_then(|n| n.checked_add(HEADER));
    if expected != Some(bytes.len()) {
        return Err(bad(format!("{} bytes for {count} entries", bytes.len())));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as f64;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let o = HEADER + i * RECORD;
        let source = Source::from_tag(bytes[o + 28])
            .ok_or_else(|| bad(format!("entry {i}: bad source tag")))?;
        entries.push(TextureEntry {
            uv: [f64_at(o), f64_at(o + 8)],
            rgb: [f32_at(o + 16), f32_at(o + 20), f32_at(o + 24)],
            source,
        });
    }
    let texture = CanonicalTexture::build(entries)?;
    let b = texture.bbox();
    let stored = [f64_at(16), f64_at(24), f64_at(32), f64_at(40)];
    if stored != [b.min[0], b.min[1], b.max[0], b.max[1]] {
        return Err(bad("bounding box does not match the entries".into()));
    }
    Ok(texture)
}

pub fn save_texture(texture: &CanonicalTexture, path: &Path) -> Result<()> {
    fs::write(path, encode_texture(texture)).map_err(|e| Error::io(path, e))
}

pub fn load_texture(path: &Path) -> Result<CanonicalTexture> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_texture(&bytes, path)
}
