//! Multi-channel images in double precision plus PNG and raw planar
//! float32 I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved `H×W×C` image; pixel `(x, y)` starts at `(y·W + x)·C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "image",
                format!("{} values for {width}x{height}x{channels}", data.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Pixel by flat index `y·W + x`.
    pub fn at(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn at_mut(&mut self, index: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[index * c..(index + 1) * c]
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    /// Row band `[y0, y1)` as its own image.
    pub fn rows(&self, y0: usize, y1: usize) -> Image {
        let stride = self.width * self.channels;
        Image {
            width: self.width,
            height: y1 - y0,
            channels: self.channels,
            data: self.data[y0 * stride..y1 * stride].to_vec(),
        }
    }

    /// 2×2 box downsample; odd trailing rows or columns are dropped.
    pub fn avg_pool2(&self) -> Image {
        let (w, h, c) = (self.width / 2, self.height / 2, self.channels);
        let mut out = Image::new(w, h, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let s = self.pixel(2 * x, 2 * y)[ch]
                        + self.pixel(2 * x + 1, 2 * y)[ch]
                        + self.pixel(2 * x, 2 * y + 1)[ch]
                        + self.pixel(2 * x + 1, 2 * y + 1)[ch];
                    out.pixel_mut(x, y)[ch] = 0.25 * s;
                }
            }
        }
        out
    }

    /// Quantize to 8 bits per channel, clamping to `[0, 1]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Write a 1-, 3- or 4-channel image as an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            c => return Err(Error::shape("save_png", format!("{c} channels"))),
        };
        image::save_buffer(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|e| image_error(path, e))
    }

    /// Read a PNG as RGB (`channels = 3`) or RGBA (`channels = 4`) in `[0, 1]`.
    pub fn load_png(path: &Path, channels: usize) -> Result<Image> {
        let img = image::open(path).map_err(|e| image_error(path, e))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let bytes = match channels {
            3 => img.into_rgb8().into_raw(),
            4 => img.into_rgba8().into_raw(),
            c => return Err(Error::shape("load_png", format!("{c} channels"))),
        };
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Image::from_data(w, h, channels, data)
    }

    /// Raw little-endian float32, planar: all of channel 0 row by row, then
    /// channel 1, and so on. No header.
    pub fn write_f32(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for ch in 0..self.channels {
            for i in 0..self.pixel_count() {
                bytes.extend_from_slice(&(self.data[i * self.channels + ch] as f32).to_le_bytes());
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_f32(path: &Path, width: usize, height: usize, channels: usize) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let n = width * height;
        if bytes.len() != n * channels * 4 {
            return Err(Error::format(
                path,
                format!("{} bytes, expected {}", bytes.len(), n * channels * 4),
            ));
        }
        let mut img = Image::new(width, height, channels);
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let (ch, i) = (k / n, k % n);
            img.data[i * channels + ch] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        Ok(img)
    }
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_planar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.25).collect();
        let img = Image::from_data(4, 2, 3, data).unwrap();
        img.write_f32(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        // first plane holds channel 0 of every pixel
        assert_eq!(f32::from_le_bytes(bytes[4..8].try_into().unwrap()), 0.75);
        assert_eq!(Image::read_f32(&p, 4, 2, 3).unwrap(), img);
        assert!(Image::read_f32(&p, 4, 2, 1).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let data: Vec<f64> = (0..27).map(|i| (i * 9) as f64 / 255.0).collect();
        let img = Image::from_data(3, 3, 3, data).unwrap();
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p, 3).unwrap(), img);
    }

    #[test]
    fn pooling_averages() {
        let img = Image::from_data(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(img.avg_pool2().data, vec![1.5]);
    }
}
