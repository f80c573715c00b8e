//! Statistical style alignment.
//!
//! Each image is measured once (mean luminance and per-channel means), then
//! every channel is multiplied by a single gain: a global rescale toward a
//! target luminance times a per-channel correction that shrinks the channel's
//! deviation from the luminance mean. Alignment needs nothing but the image
//! itself, so it applies equally to gallery and query images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, RealImage};

/// Channel statistics of one image, all on the 0..255 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleStats {
    pub s_cm: f64,
    pub r_cm: f64,
    pub g_cm: f64,
    pub b_cm: f64,
    pub r_bias: f64,
    pub g_bias: f64,
    pub b_bias: f64,
}

impl StyleStats {
    pub fn biases(&self) -> [f64; 3] {
        [self.r_bias, self.g_bias, self.b_bias]
    }

    pub fn channel_means(&self) -> [f64; 3] {
        [self.r_cm, self.g_cm, self.b_cm]
    }
}

/// Whether the correction pushes channel means toward (`Attenuate`) or away
/// from (`Amplify`) the luminance mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasSign {
    #[default]
    Attenuate,
    Amplify,
}

impl BiasSign {
    fn sigma(self) -> f64 {
        match self {
            BiasSign::Attenuate => 1.0,
            BiasSign::Amplify => -1.0,
        }
    }
}

impl std::str::FromStr for BiasSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attenuate" => Ok(BiasSign::Attenuate),
            "amplify" => Ok(BiasSign::Amplify),
            other => Err(Error::InvalidConfig(format!("unknown bias sign {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleConfig {
    /// Luminance every image is rescaled toward.
    pub s_target: f64,
    /// Fraction of the channel bias that is corrected, in `[0, 1]`.
    pub correction_strength: f64,
    pub bias_sign: BiasSign,
    /// Bounds on the per-channel correction factor.
    pub factor_clamp: (f64, f64),
    pub clip_enabled: bool,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            s_target: 128.0,
            correction_strength: 1.0,
            bias_sign: BiasSign::Attenuate,
            factor_clamp: (0.5, 2.0),
            clip_enabled: true,
        }
    }
}

impl StyleConfig {
    pub fn with_target(s_target: f64) -> Self {
        Self {
            s_target,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (f_min, f_max) = self.factor_clamp;
        if !(self.s_target > 0.0 && self.s_target < 255.0) {
            return Err(Error::InvalidConfig(format!(
                "s_target {} outside (0, 255)",
                self.s_target
            )));
        }
        if !(0.0..=1.0).contains(&self.correction_strength) {
            return Err(Error::InvalidConfig(format!(
                "correction strength {} outside [0, 1]",
                self.correction_strength
            )));
        }
        if !(f_min > 0.0 && f_min <= 1.0 && f_max >= 1.0 && f_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "factor clamp ({f_min}, {f_max}) must satisfy 0 < min <= 1 <= max"
            )));
        }
        Ok(())
    }

    /// Per-channel multiplicative gains `scale * factor_c` for an image with
    /// the given statistics.
    pub fn gains(&self, stats: &StyleStats) -> Result<[f64; 3]> {
        self.validate()?;
        if stats.s_cm == 0.0 {
            return Err(Error::DegenerateLuminance);
        }
        let scale = self.s_target / stats.s_cm;
        let sigma = self.bias_sign.sigma();
        let (f_min, f_max) = self.factor_clamp;
        Ok(stats.biases().map(|bias| {
            let factor = 1.0 - sigma * self.correction_strength * bias / self.s_target;
            scale * factor.clamp(f_min, f_max)
        }))
    }
}

pub fn compute_stats(img: &ImageBuffer) -> Result<StyleStats> {
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let mut sums = [0u64; 3];
    for p in img.pixels() {
        for (sum, &v) in sums.iter_mut().zip(p) {
            *sum += v as u64;
        }
    }
    let n = img.len() as f64;
    // Integer sums keep s_cm and the channel means exactly consistent: with
    // equal channel sums every bias is exactly zero.
    let s_cm = (sums[0] + sums[1] + sums[2]) as f64 / (3.0 * n);
    let [r_cm, g_cm, b_cm] = sums.map(|s| s as f64 / n);
    Ok(StyleStats {
        s_cm,
        r_cm,
        g_cm,
        b_cm,
        r_bias: r_cm - s_cm,
        g_bias: g_cm - s_cm,
        b_bias: b_cm - s_cm,
    })
}

/// Unquantized alignment. With `clip_enabled` values are clamped to
/// `[0, 255]` but not rounded; without it the raw products are returned.
pub fn align_style_real(img: &ImageBuffer, cfg: &StyleConfig) -> Result<RealImage> {
    let stats = compute_stats(img)?;
    let gains = cfg.gains(&stats)?;
    let pixels = img
        .pixels()
        .iter()
        .map(|p| {
            let mut out = [0.0; 3];
            for c in 0..3 {
                let v = p[c] as f64 * gains[c];
                out[c] = if cfg.clip_enabled { v.clamp(0.0, 255.0) } else { v };
            }
            out
        })
        .collect();
    Ok(RealImage {
        width: img.width(),
        height: img.height(),
        pixels,
    })
}

/// Aligns and re-quantizes to 8 bits (round half away from zero, clamp).
pub fn align_style(img: &ImageBuffer, cfg: &StyleConfig) -> Result<ImageBuffer> {
    align_style_real(img, cfg)?.quantize()
}

/// Mean of the per-image luminance means, a data-driven `s_target`.
pub fn compute_dataset_target<'a, I>(imgs: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a ImageBuffer>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for img in imgs {
        let stats = compute_stats(img)?;
        if stats.s_cm == 0.0 {
            return Err(Error::DegenerateLuminance);
        }
        total += stats.s_cm;
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoImages);
    }
    Ok(total / count as f64)
}
