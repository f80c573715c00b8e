//! Orientation alignment: mask an image to its inscribed circle, then rotate
//! it so every view shares the reference (north-up) heading.
//!
//! Angles are in degrees; a positive angle turns the content
//! counterclockwise as displayed (y axis pointing up).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{clip_channel, ImageBuffer, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            other => Err(Error::InvalidConfig(format!(
                "unknown interpolation {other:?}"
            ))),
        }
    }
}

/// Maps a view index to a rotation and controls how it is resampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationPolicy {
    pub degrees_per_index: f64,
    /// Heading of the reference (satellite) view.
    pub reference_heading_deg: f64,
    pub interpolation: Interpolation,
    pub fill: Rgb,
}

impl Default for RotationPolicy {
    fn default() -> Self {
        Self {
            // One orbit of 54 drone frames.
            degrees_per_index: 360.0 / 54.0,
            reference_heading_deg: 0.0,
            interpolation: Interpolation::Bilinear,
            fill: [0, 0, 0],
        }
    }
}

impl RotationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !self.degrees_per_index.is_finite() {
            return Err(Error::InvalidConfig(
                "degrees per index must be finite".into(),
            ));
        }
        if !(0.0..360.0).contains(&self.reference_heading_deg) {
            return Err(Error::InvalidConfig(format!(
                "reference heading {} outside [0, 360)",
                self.reference_heading_deg
            )));
        }
        Ok(())
    }
}

/// Whether pixel `(x, y)` lies strictly inside the inscribed circle of a
/// `side x side` image. Exact integer form of
/// `|(x, y) - (side/2 - 0.5, side/2 - 0.5)| < side/2`.
pub fn inside_circle(x: usize, y: usize, side: usize) -> bool {
    let dx = 2 * x as i64 - (side as i64 - 1);
    let dy = 2 * y as i64 - (side as i64 - 1);
    dx * dx + dy * dy < (side * side) as i64
}

/// Whether pixel `(x, y)` is within `fraction` of the circle radius.
pub fn within_radius(x: usize, y: usize, side: usize, fraction: f64) -> bool {
    let c = side as f64 / 2.0 - 0.5;
    let r = fraction * side as f64 / 2.0;
    let (dx, dy) = (x as f64 - c, y as f64 - c);
    dx * dx + dy * dy < r * r
}

fn checked_side(img: &ImageBuffer) -> Result<usize> {
    let side = img.square_side()?;
    if side < 2 {
        return Err(Error::InvalidImage(format!(
            "side {side} is below the minimum of 2"
        )));
    }
    Ok(side)
}

pub fn circular_crop(img: &ImageBuffer, fill: Rgb) -> Result<ImageBuffer> {
    let side = checked_side(img)?;
    Ok(ImageBuffer::from_fn(side, side, |x, y| {
        if inside_circle(x, y, side) {
            img.get(x, y)
        } else {
            fill
        }
    }))
}

/// Wraps an angle into `(-180, 180]`.
pub fn normalize_angle(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

// Angles this close to a multiple of 90 degrees are treated as exact quarter
// turns, so accumulated index arithmetic (27 * 360/54) still hits them.
const QUARTER_SNAP: f64 = 1e-9;

fn snap_quarter(deg: f64) -> f64 {
    let quarters = (deg / 90.0).round();
    if (deg - quarters * 90.0).abs() < QUARTER_SNAP {
        quarters * 90.0
    } else {
        deg
    }
}

/// `(sin, cos)` with exact values at quarter turns.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let snapped = snap_quarter(deg);
    let quarters = snapped / 90.0;
    if quarters.fract() == 0.0 {
        match (quarters as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        snapped.to_radians().sin_cos()
    }
}

pub fn rotate(img: &ImageBuffer, angle_deg: f64, policy: &RotationPolicy) -> Result<ImageBuffer> {
    let side = checked_side(img)?;
    if !angle_deg.is_finite() {
        return Err(Error::NonFinite(angle_deg));
    }
    let (sin, cos) = sin_cos_deg(angle_deg);
    let c = side as f64 / 2.0 - 0.5;
    let r2 = (side as f64 / 2.0).powi(2);
    let max = (side - 1) as f64;

    let mut out = ImageBuffer::filled(side, side, policy.fill);
    for y in 0..side {
        for x in 0..side {
            if !inside_circle(x, y, side) {
                continue;
            }
            // Output offset in y-up coordinates, rotated back by -angle.
            let u = x as f64 - c;
            let v = c - y as f64;
            let su = cos * u + sin * v;
            let sv = -sin * u + cos * v;
            if su * su + sv * sv >= r2 {
                continue;
            }
            let sx = (c + su).clamp(0.0, max);
            let sy = (c - sv).clamp(0.0, max);
            let value = match policy.interpolation {
                Interpolation::Nearest => img.get(sx.round() as usize, sy.round() as usize),
                Interpolation::Bilinear => bilinear(img, sx, sy)?,
            };
            out.set(x, y, value);
        }
    }
    Ok(out)
}

fn bilinear(img: &ImageBuffer, sx: f64, sy: f64) -> Result<Rgb> {
    let side = img.width();
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(side - 1);
    let y1 = (y0 + 1).min(side - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let top = p00[ch] as f64 * (1.0 - fx) + p10[ch] as f64 * fx;
        let bottom = p01[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
        out[ch] = clip_channel(top * (1.0 - fy) + bottom * fy)?;
    }
    Ok(out)
}

/// Rotation that brings view `view_index` to the reference heading,
/// normalized to `(-180, 180]`.
pub fn view_rotation(view_index: u32, policy: &RotationPolicy) -> f64 {
    let heading = view_index as f64 * policy.degrees_per_index;
    snap_quarter(normalize_angle(policy.reference_heading_deg - heading))
}

pub fn align_view(img: &ImageBuffer, view_index: u32, policy: &RotationPolicy) -> Result<ImageBuffer> {
    policy.validate()?;
    let cropped = circular_crop(img, policy.fill)?;
    rotate(&cropped, view_rotation(view_index, policy), policy)
}

/// Same as [`align_view`] but driven by a measured heading (e.g. a compass).
pub fn align_by_heading(img: &ImageBuffer, heading_deg: f64, policy: &RotationPolicy) -> Result<ImageBuffer> {
    if !heading_deg.is_finite() {
        return Err(Error::NonFinite(heading_deg));
    }
    policy.validate()?;
    let cropped = circular_crop(img, policy.fill)?;
    let angle = snap_quarter(normalize_angle(policy.reference_heading_deg - heading_deg));
    rotate(&cropped, angle, policy)
}
