//! Planar float images.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-planar (`C×H×W`) image of `f64` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::param(format!(
                "image buffer of length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Image with every pixel set to `color` (one value per channel).
    pub fn solid(height: usize, width: usize, color: &[f64]) -> Self {
        let mut img = Self::zeros(color.len(), height, width);
        for (c, &v) in color.iter().enumerate() {
            img.plane_mut(c).fill(v);
        }
        img
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// 2×2 average pooling; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Image {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut out = Image::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let s = self.get(c, 2 * y, 2 * x)
                        + self.get(c, 2 * y + 1, 2 * x)
                        + self.get(c, 2 * y, 2 * x + 1)
                        + self.get(c, 2 * y + 1, 2 * x + 1);
                    out.set(c, y, x, 0.25 * s);
                }
            }
        }
        out
    }

    /// Adjoint of [`Image::downsample2`] applied to a gradient.
    pub fn downsample2_backward(grad: &Image, height: usize, width: usize) -> Image {
        let mut out = Image::zeros(grad.channels, height, width);
        for c in 0..grad.channels {
            for y in 0..grad.height {
                for x in 0..grad.width {
                    let g = 0.25 * grad.get(c, y, x);
                    for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        out.set(c, 2 * y + dy, 2 * x + dx, g);
                    }
                }
            }
        }
        out
    }

    /// Repeated 2× pooling down to `(height, width)`.
    pub fn downsample_to(&self, height: usize, width: usize) -> Result<Image> {
        let mut img = self.clone();
        while img.height > height {
            if img.height % 2 != 0 || img.width % 2 != 0 {
                break;
            }
            img = img.downsample2();
        }
        if img.height != height || img.width != width {
            return Err(Error::param(format!(
                "cannot pool {}x{} down to {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(img)
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        let mut out = Image::zeros(self.channels, height, width);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                for c in 0..self.channels {
                    let top = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
                    let bot = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
                    out.set(c, y, x, top * (1.0 - ty) + bot * ty);
                }
            }
        }
        out
    }

    /// Horizontal concatenation of equally tall images.
    pub fn hconcat(images: &[Image]) -> Result<Image> {
        let Some(first) = images.first() else {
            return Err(Error::param("nothing to concatenate"));
        };
        let (c, h) = (first.channels, first.height);
        if images.iter().any(|i| i.channels != c || i.height != h) {
            return Err(Error::param("images disagree in height or channel count"));
        }
        let width: usize = images.iter().map(|i| i.width).sum();
        let mut out = Image::zeros(c, h, width);
        let mut x0 = 0;
        for img in images {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..img.width {
                        out.set(ch, y, x0 + x, img.get(ch, y, x));
                    }
                }
            }
            x0 += img.width;
        }
        Ok(out)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut buf);
        let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        use image::ImageEncoder;
        match self.channels {
            1 => {
                let bytes: Vec<u8> = self.data.iter().map(|&v| quant(v)).collect();
                encoder.write_image(&bytes, w, h, image::ExtendedColorType::L8)?;
            }
            3 => {
                let mut bytes = Vec::with_capacity(self.pixels() * 3);
                for y in 0..self.height {
                    for x in 0..self.width {
                        for c in 0..3 {
                            bytes.push(quant(self.get(c, y, x)));
                        }
                    }
                }
                encoder.write_image(&bytes, w, h, image::ExtendedColorType::Rgb8)?;
            }
            n => return Err(Error::param(format!("cannot encode {n}-channel image as PNG"))),
        }
        Ok(buf)
    }

    /// Writes an 8-bit PNG (1 or 3 channels, values clamped to `[0, 1]`).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::zeros(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px[c] as f64 / 255.0);
            }
        }
        Ok(out)
    }

    /// Writes the samples as a little-endian `f8` NPY array of shape `(C, H, W)`
    /// (or `(H, W)` for one channel).
    pub fn save_npy(&self, path: &Path) -> Result<()> {
        let shape = if self.channels == 1 {
            format!("({}, {})", self.height, self.width)
        } else {
            format!("({}, {}, {})", self.channels, self.height, self.width)
        };
        let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape}, }}");
        // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
        let unpadded = 10 + header.len() + 1;
        header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
        header.push('\n');
        let mut bytes = Vec::with_capacity(10 + header.len() + self.data.len() * 8);
        bytes.extend_from_slice(b"\x93NUMPY\x01\x00");
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_backward_is_adjoint() {
        let a = Image::from_vec(1, 4, 2, (0..8).map(|v| v as f64).collect()).unwrap();
        let g = Image::from_vec(1, 2, 1, vec![1.5, -2.0]).unwrap();
        let lhs: f64 = a.downsample2().data.iter().zip(&g.data).map(|(x, y)| x * y).sum();
        let back = Image::downsample2_backward(&g, 4, 2);
        let rhs: f64 = a.data.iter().zip(&back.data).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn npy_header_is_aligned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.npy");
        Image::zeros(1, 3, 5).save_npy(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(bytes.len(), 10 + hlen + 15 * 8);
    }

    #[test]
    fn png_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::solid(4, 2, &[0.2, 0.5, 1.0]);
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
