//! Feature maps: a small deterministic convolutional extractor and the FMAP
//! binary file format for exchanging activations with external tools.
//!
//! FMAP layout (all little-endian):
//!
//! | offset | size      | content                         |
//! |--------|-----------|---------------------------------|
//! | 0      | 4         | magic `b"FMAP"`                 |
//! | 4      | 2         | format version, `u16` = 1       |
//! | 6      | 12        | `C`, `H`, `W` as `u32`          |
//! | 18     | 4 * C*H*W | `f32` values, channel-major     |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FeatureMap, ImageBuffer};
use crate::rng::SplitMix64;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u16 = 1;
pub const FMAP_HEADER_LEN: usize = 18;

const KERNEL: usize = 3;
const WEIGHT_BOUND: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyExtractorConfig {
    pub seed: u64,
    /// Output channels of each conv stage; one entry per stage.
    pub channel_plan: Vec<usize>,
}

impl Default for ToyExtractorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            channel_plan: vec![8, 16, 32],
        }
    }
}

impl ToyExtractorConfig {
    pub fn stages(&self) -> usize {
        self.channel_plan.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_plan.is_empty() || self.channel_plan.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "channel plan {:?} must be non-empty with every stage >= 1",
                self.channel_plan
            )));
        }
        Ok(())
    }

    /// Smallest accepted image side, `2^stages`.
    pub fn min_side(&self) -> usize {
        1 << self.stages()
    }
}

/// Conv weights for every stage, laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone)]
pub struct ToyExtractor {
    stages: Vec<Stage>,
    min_side: usize,
}

#[derive(Debug, Clone)]
struct Stage {
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f32>,
}

impl ToyExtractor {
    /// Draws all weights from one SplitMix64 stream seeded with `cfg.seed`,
    /// in the order stage, output channel, input channel, kernel row, kernel
    /// column; each uniform in `[-0.1, 0.1)`.
    pub fn new(cfg: &ToyExtractorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(cfg.seed);
        let mut in_channels = 3;
        let mut stages = Vec::with_capacity(cfg.stages());
        for &out_channels in &cfg.channel_plan {
            let n = out_channels * in_channels * KERNEL * KERNEL;
            let weights = (0..n)
                .map(|_| rng.uniform_f32(-WEIGHT_BOUND, WEIGHT_BOUND))
                .collect();
            stages.push(Stage {
                in_channels,
                out_channels,
                weights,
            });
            in_channels = out_channels;
        }
        Ok(Self {
            stages,
            min_side: cfg.min_side(),
        })
    }

    /// Runs conv(3x3, zero pad 1) -> ReLU -> 2x2 average pool per stage on
    /// the image scaled to `[0, 1]`.
    ///
    /// Each conv output starts at 0.0 and adds its terms in the order input
    /// channel, kernel row, kernel column; terms that fall in the padding are
    /// skipped. Pooling sums the 2x2 window row by row and multiplies by 0.25.
    pub fn extract(&self, img: &ImageBuffer) -> Result<FeatureMap> {
        let side = img.square_side()?;
        if side < self.min_side {
            return Err(Error::ImageTooSmall {
                side,
                required: self.min_side,
            });
        }
        let plane = side * side;
        let mut act = vec![0f32; 3 * plane];
        for (i, p) in img.pixels().iter().enumerate() {
            for c in 0..3 {
                act[c * plane + i] = p[c] as f32 / 255.0;
            }
        }
        let mut h = side;
        let mut w = side;
        for stage in &self.stages {
            let conv = conv3x3_relu(&act, h, w, stage);
            let (pooled, ph, pw) = avg_pool2(&conv, stage.out_channels, h, w);
            act = pooled;
            h = ph;
            w = pw;
        }
        let channels = self.stages.last().map_or(3, |s| s.out_channels);
        FeatureMap::new(channels, h, w, act)
    }
}

fn conv3x3_relu(input: &[f32], h: usize, w: usize, stage: &Stage) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0f32; stage.out_channels * plane];
    for (o, acc) in out.chunks_exact_mut(plane).enumerate() {
        for i in 0..stage.in_channels {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let weight = stage.weights[((o * stage.in_channels + i) * KERNEL + ky) * KERNEL + kx];
                    // Output rows/cols whose tap (y + ky - 1, x + kx - 1) is in bounds.
                    let (y_lo, y_hi) = tap_range(ky, h);
                    let (x_lo, x_hi) = tap_range(kx, w);
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let dst = &mut acc[y * w + x_lo..y * w + x_hi];
                        let row = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += weight * s;
                        }
                    }
                }
            }
        }
        for v in acc.iter_mut() {
            *v = v.max(0.0);
        }
    }
    out
}

fn tap_range(k: usize, len: usize) -> (usize, usize) {
    match k {
        0 => (1.min(len), len),
        1 => (0, len),
        _ => (0, len.saturating_sub(1)),
    }
}

fn avg_pool2(input: &[f32], channels: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * ph * pw);
    for c in 0..channels {
        let src = &input[c * h * w..(c + 1) * h * w];
        for y in 0..ph {
            let r0 = &src[2 * y * w..];
            let r1 = &src[(2 * y + 1) * w..];
            for x in 0..pw {
                let sum = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
                out.push(sum * 0.25);
            }
        }
    }
    (out, ph, pw)
}

pub fn extract(img: &ImageBuffer, cfg: &ToyExtractorConfig) -> Result<FeatureMap> {
    ToyExtractor::new(cfg)?.extract(img)
}

pub fn encode_feature_map(fm: &FeatureMap) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(FMAP_HEADER_LEN + 4 * fm.data().len());
    bytes.extend_from_slice(FMAP_MAGIC);
    bytes.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    for dim in [fm.channels(), fm.height(), fm.width()] {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in fm.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Parses FMAP bytes; `path` only labels errors.
pub fn decode_feature_map(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 || &bytes[..4] != FMAP_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(truncated(FMAP_HEADER_LEN));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FMAP_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(6), dim(10), dim(14));
    let count = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::InvalidFeatureMap(format!("shape {c}x{h}x{w} overflows")))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(FMAP_HEADER_LEN))
        .ok_or_else(|| Error::InvalidFeatureMap(format!("shape {c}x{h}x{w} overflows")))?;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::InvalidFeatureMap(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let mut data = Vec::with_capacity(count);
    for (index, chunk) in bytes[FMAP_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinitePayload {
                path: path.to_path_buf(),
                index,
            });
        }
        data.push(v);
    }
    FeatureMap::new(c, h, w, data)
}

pub fn write_feature_map(fm: &FeatureMap, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }
    std::fs::write(path, encode_feature_map(fm))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_feature_map(&bytes, path)
}
