//! Value types shared by every stage: 8-bit RGB rasters, real-valued
//! rasters, channel-first feature maps and flat vectors.

use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Row-major interleaved RGB image with 8-bit channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if width > 1 << 16 || height > 1 << 16 {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} exceeds the 65536-pixel side limit"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: Rgb) {
        self.pixels[y * self.width + x] = value;
    }

    /// Side length of a square image.
    pub fn square_side(&self) -> Result<usize> {
        if self.width != self.height {
            return Err(Error::NotSquare {
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.width)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let decoded = image::open(path).map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.pixels().map(|p| p.0).collect();
        Self::new(w as usize, h as usize, pixels)
    }

    /// Writes PNG or JPEG depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
        }
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, flat)
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Real-valued RGB raster, used where values are kept unquantized.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RealImage {
    /// Quantizes every channel with [`clip_channel`].
    pub fn quantize(&self) -> Result<ImageBuffer> {
        let pixels = self
            .pixels
            .iter()
            .map(|p| Ok([clip_channel(p[0])?, clip_channel(p[1])?, clip_channel(p[2])?]))
            .collect::<Result<Vec<_>>>()?;
        ImageBuffer::new(self.width, self.height, pixels)
    }
}

/// Mean of the three channels.
pub fn luminance(pixel: Rgb) -> f64 {
    (pixel[0] as f64 + pixel[1] as f64 + pixel[2] as f64) / 3.0
}

/// Rounds half away from zero, then clamps to `[0, 255]`.
pub fn clip_channel(v: f64) -> Result<u8> {
    if !v.is_finite() {
        return Err(Error::NonFinite(v));
    }
    Ok(v.round().clamp(0.0, 255.0) as u8)
}

/// Channel-first `C x H x W` tensor of finite `f32` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::InvalidFeatureMap(format!(
                "{} values for shape {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatureMap(format!(
                "non-finite value at element {i}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// One channel as a row-major `H x W` plane.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Swaps the spatial axes.
    pub fn transposed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            for x in 0..self.width {
                for y in 0..self.height {
                    data.push(self.get(c, y, x));
                }
            }
        }
        Self {
            channels: self.channels,
            height: self.width,
            width: self.height,
            data,
        }
    }
}

/// A flat real vector: pooled part, global descriptor or retrieval embedding.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(pub Vec<f32>);

impl Vector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(v as f64));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }
}

impl From<Vec<f32>> for Vector {
    fn from(values: Vec<f32>) -> Self {
        Self(values)
    }
}
