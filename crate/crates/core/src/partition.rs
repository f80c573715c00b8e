//! Global and part-level pooling of feature maps, and assembly of the
//! retrieval embedding.
//!
//! Region boundaries use floor division: along an axis of length `L` split
//! into `n` parts, part `i` covers `[floor(i*L/n), floor((i+1)*L/n))`. Dense
//! parts are emitted row-major; regular parts list the `n` horizontal stripes
//! (top to bottom) before the `n` vertical stripes (left to right). All parts
//! are unweighted.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_feature_map, write_feature_map};
use crate::raster::{FeatureMap, Vector};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionKind {
    /// `n` full-width stripes plus `n` full-height stripes, written `n+n`.
    Regular,
    /// An `n x n` grid, written `nxn`.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PartitionStrategy {
    pub kind: PartitionKind,
    pub n: usize,
}

impl PartitionStrategy {
    pub fn regular(n: usize) -> Self {
        Self {
            kind: PartitionKind::Regular,
            n,
        }
    }

    pub fn dense(n: usize) -> Self {
        Self {
            kind: PartitionKind::Dense,
            n,
        }
    }

    pub fn part_count(&self) -> usize {
        match self.kind {
            PartitionKind::Regular => 2 * self.n,
            PartitionKind::Dense => self.n * self.n,
        }
    }
}

impl fmt::Display for PartitionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PartitionKind::Regular => write!(f, "{}+{}", self.n, self.n),
            PartitionKind::Dense => write!(f, "{}x{}", self.n, self.n),
        }
    }
}

pub fn parse_strategy(text: &str) -> Result<PartitionStrategy> {
    let malformed = || Error::ParseStrategy {
        token: text.to_string(),
    };
    let (kind, (a, b)) = if let Some(halves) = text.split_once('+') {
        (PartitionKind::Regular, halves)
    } else if let Some(halves) = text.split_once('x') {
        (PartitionKind::Dense, halves)
    } else {
        return Err(malformed());
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(a) || !digits(b) || a != b {
        return Err(malformed());
    }
    let n: usize = a.parse().map_err(|_| malformed())?;
    if n == 0 {
        return Err(malformed());
    }
    Ok(PartitionStrategy { kind, n })
}

impl FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_strategy(s)
    }
}

impl TryFrom<String> for PartitionStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        parse_strategy(&s)
    }
}

impl From<PartitionStrategy> for String {
    fn from(s: PartitionStrategy) -> Self {
        s.to_string()
    }
}

fn bounds(len: usize, n: usize, i: usize) -> Range<usize> {
    (i * len / n)..((i + 1) * len / n)
}

/// Per-channel mean over a rectangular region.
fn region_mean(fm: &FeatureMap, rows: Range<usize>, cols: Range<usize>) -> Vector {
    let count = (rows.len() * cols.len()) as f64;
    let w = fm.width();
    let values = (0..fm.channels())
        .map(|c| {
            let plane = fm.plane(c);
            let mut sum = 0f64;
            for y in rows.clone() {
                for &v in &plane[y * w + cols.start..y * w + cols.end] {
                    sum += v as f64;
                }
            }
            (sum / count) as f32
        })
        .collect();
    Vector(values)
}

pub fn global_pool(fm: &FeatureMap) -> Vector {
    region_mean(fm, 0..fm.height(), 0..fm.width())
}

pub fn pool_parts(fm: &FeatureMap, strategy: PartitionStrategy) -> Result<Vec<Vector>> {
    let (h, w, n) = (fm.height(), fm.width(), strategy.n);
    if n == 0 || n > h.min(w) {
        return Err(Error::PartitionTooFine {
            parts: n,
            height: h,
            width: w,
        });
    }
    let parts = match strategy.kind {
        PartitionKind::Dense => (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| region_mean(fm, bounds(h, n, i), bounds(w, n, j)))
            .collect(),
        PartitionKind::Regular => {
            let rows = (0..n).map(|i| region_mean(fm, bounds(h, n, i), 0..w));
            let cols = (0..n).map(|j| region_mean(fm, 0..h, bounds(w, n, j)));
            rows.chain(cols).collect()
        }
    };
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProjectionSource {
    Identity,
    Seeded(u64),
    Loaded(PathBuf),
    Given,
}

/// Linear map `out_dim x in_dim` applied to part vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f32>,
    source: ProjectionSource,
}

impl Projection {
    pub fn from_weights(in_dim: usize, out_dim: usize, weights: Vec<f32>) -> Result<Self> {
        Self::build(in_dim, out_dim, weights, ProjectionSource::Given)
    }

    fn build(in_dim: usize, out_dim: usize, weights: Vec<f32>, source: ProjectionSource) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "projection dims {out_dim}x{in_dim} must be positive"
            )));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::DimMismatch {
                expected: in_dim * out_dim,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("projection weights must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            source,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::build(dim, dim, weights, ProjectionSource::Identity)
    }

    /// Weights uniform in `[-1, 1) / sqrt(in_dim)`, drawn row by row from
    /// SplitMix64.
    pub fn seeded(seed: u64, in_dim: usize, out_dim: usize) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let bound = 1.0 / (in_dim.max(1) as f32).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.uniform_f32(-bound, bound))
            .collect();
        Self::build(in_dim, out_dim, weights, ProjectionSource::Seeded(seed))
    }

    /// Loads an FMAP file with `C = 1`, `H = out_dim`, `W = in_dim`.
    pub fn load(path: &Path) -> Result<Self> {
        let fm = read_feature_map(path)?;
        if fm.channels() != 1 {
            return Err(Error::InvalidConfig(format!(
                "projection file {} must have one channel, found {}",
                path.display(),
                fm.channels()
            )));
        }
        Self::build(
            fm.width(),
            fm.height(),
            fm.data().to_vec(),
            ProjectionSource::Loaded(path.to_path_buf()),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let fm = FeatureMap::new(1, self.out_dim, self.in_dim, self.weights.clone())?;
        write_feature_map(&fm, path)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn source(&self) -> &ProjectionSource {
        &self.source
    }
}

pub fn project(v: &Vector, p: &Projection) -> Result<Vector> {
    if v.dim() != p.in_dim {
        return Err(Error::DimMismatch {
            expected: p.in_dim,
            found: v.dim(),
        });
    }
    let values = p
        .weights
        .chunks_exact(p.in_dim)
        .map(|row| {
            row.iter()
                .zip(v.values())
                .map(|(&w, &x)| w as f64 * x as f64)
                .sum::<f64>() as f32
        })
        .collect();
    Ok(Vector(values))
}

/// Which blocks of a [`Descriptor`] enter the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorMode {
    GlobalOnly,
    PartsOnly,
    #[default]
    Concat,
}

impl FromStr for DescriptorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global-only" | "global_only" => Ok(DescriptorMode::GlobalOnly),
            "parts-only" | "parts_only" => Ok(DescriptorMode::PartsOnly),
            "concat" => Ok(DescriptorMode::Concat),
            other => Err(Error::InvalidConfig(format!(
                "unknown descriptor mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub global: Vector,
    pub parts: Vec<Vector>,
    pub mode: DescriptorMode,
}

pub fn build_descriptor(
    fm: &FeatureMap,
    strategy: PartitionStrategy,
    mode: DescriptorMode,
    projection: Option<&Projection>,
) -> Result<Descriptor> {
    let global = global_pool(fm);
    let mut parts = pool_parts(fm, strategy)?;
    if let Some(p) = projection {
        parts = parts
            .iter()
            .map(|v| project(v, p))
            .collect::<Result<_>>()?;
    }
    Ok(Descriptor {
        global,
        parts,
        mode,
    })
}

/// Global block first, then parts in pooling order.
pub fn flatten_embedding(d: &Descriptor) -> Vector {
    let mut out = Vec::new();
    if d.mode != DescriptorMode::PartsOnly {
        out.extend_from_slice(d.global.values());
    }
    if d.mode != DescriptorMode::GlobalOnly {
        for part in &d.parts {
            out.extend_from_slice(part.values());
        }
    }
    Vector(out)
}
