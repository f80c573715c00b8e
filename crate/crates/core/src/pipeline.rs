//! End-to-end embedding of manifest records and the preprocessing ablation
//! (none / crop / crop+rotate / crop+rotate+style).

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Manifest, Record};
use crate::error::{Error, Result};
use crate::features::{ToyExtractor, ToyExtractorConfig};
use crate::par::Execution;
use crate::partition::{build_descriptor, flatten_embedding, DescriptorMode, PartitionStrategy, Projection};
use crate::raster::{FeatureMap, ImageBuffer};
use crate::retrieval::{build_index, evaluate, EvalReport, GalleryEntry};
use crate::spatial::{align_by_heading, align_view, circular_crop, RotationPolicy};
use crate::style::{align_style, StyleConfig};
use crate::view::View;

/// How part vectors are projected, if at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProjectionConfig {
    Seeded { seed: u64, out_dim: usize },
    Loaded { path: PathBuf },
}

impl ProjectionConfig {
    pub fn build(&self, in_dim: usize) -> Result<Projection> {
        let p = match self {
            ProjectionConfig::Seeded { seed, out_dim } => Projection::seeded(*seed, in_dim, *out_dim)?,
            ProjectionConfig::Loaded { path } => Projection::load(path)?,
        };
        if p.in_dim() != in_dim {
            return Err(Error::DimMismatch {
                expected: in_dim,
                found: p.in_dim(),
            });
        }
        Ok(p)
    }
}

/// Every knob of the pipeline; round-trips through TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub strategy: PartitionStrategy,
    pub mode: DescriptorMode,
    pub ks: Vec<usize>,
    /// Square side images are resized to after crop/rotate; `None` keeps
    /// the native size.
    pub resize_to: Option<usize>,
    pub projection: Option<ProjectionConfig>,
    pub style: StyleConfig,
    pub rotation: RotationPolicy,
    pub extractor: ToyExtractorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            strategy: PartitionStrategy::dense(4),
            mode: DescriptorMode::Concat,
            ks: vec![1, 5, 10],
            resize_to: None,
            projection: None,
            style: StyleConfig::default(),
            rotation: RotationPolicy::default(),
            extractor: ToyExtractorConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.style.validate()?;
        self.rotation.validate()?;
        self.extractor.validate()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidConfig(format!("K values {:?} must be non-empty and >= 1", self.ks)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }
}

/// Preprocessing applied before feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Steps {
    pub crop: bool,
    pub rotate: bool,
    pub style: bool,
}

impl Steps {
    pub const NONE: Steps = Steps { crop: false, rotate: false, style: false };
    pub const C: Steps = Steps { crop: true, rotate: false, style: false };
    pub const CR: Steps = Steps { crop: true, rotate: true, style: false };
    pub const CRA: Steps = Steps { crop: true, rotate: true, style: true };

    /// The four ablation rows in order.
    pub const ABLATION: [Steps; 4] = [Self::NONE, Self::C, Self::CR, Self::CRA];
}

impl fmt::Display for Steps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.crop {
            parts.push("C");
        }
        if self.rotate {
            parts.push("R");
        }
        if self.style {
            parts.push("A");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

/// Rotation that brings a record to the reference heading: its recorded
/// heading if known, else its view index under the policy. Non-drone views
/// are not rotated.
pub fn orient(img: &ImageBuffer, record: &Record, policy: &RotationPolicy) -> Result<ImageBuffer> {
    match (record.view, record.heading_deg, record.view_index) {
        (View::Drone, Some(h), _) => align_by_heading(img, h, policy),
        (View::Drone, None, Some(i)) => align_view(img, i, policy),
        _ => circular_crop(img, policy.fill),
    }
}

/// Style, crop and rotate as selected. Style runs on the full frame first.
pub fn preprocess(img: &ImageBuffer, record: &Record, steps: Steps, cfg: &PipelineConfig) -> Result<ImageBuffer> {
    let mut out = if steps.style {
        align_style(img, &cfg.style)?
    } else {
        img.clone()
    };
    if steps.rotate {
        out = orient(&out, record, &cfg.rotation)?;
    } else if steps.crop {
        out = circular_crop(&out, cfg.rotation.fill)?;
    }
    if let Some(side) = cfg.resize_to {
        out = resize(&out, side)?;
    }
    Ok(out)
}

fn resize(img: &ImageBuffer, side: usize) -> Result<ImageBuffer> {
    if img.width() == side && img.height() == side {
        return Ok(img.clone());
    }
    let flat: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, flat)
        .expect("buffer length matches dimensions");
    let resized = image::imageops::resize(&buf, side as u32, side as u32, image::imageops::FilterType::Triangle);
    ImageBuffer::new(side, side, resized.pixels().map(|p| p.0).collect())
}

/// Reusable extraction state for one configuration.
pub struct Embedder {
    cfg: PipelineConfig,
    extractor: ToyExtractor,
}

impl Embedder {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            extractor: ToyExtractor::new(&cfg.extractor)?,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn feature_map(&self, img: &ImageBuffer, record: &Record, steps: Steps) -> Result<FeatureMap> {
        self.extractor.extract(&preprocess(img, record, steps, &self.cfg)?)
    }

    /// Builds the embedding of a feature map under the configured strategy,
    /// mode and projection.
    pub fn embed_feature_map(&self, fm: &FeatureMap) -> Result<crate::raster::Vector> {
        let projection = match &self.cfg.projection {
            Some(p) => Some(p.build(fm.channels())?),
            None => None,
        };
        let d = build_descriptor(fm, self.cfg.strategy, self.cfg.mode, projection.as_ref())?;
        Ok(flatten_embedding(&d))
    }

    pub fn embed(&self, img: &ImageBuffer, record: &Record, steps: Steps) -> Result<GalleryEntry> {
        let fm = self.feature_map(img, record, steps)?;
        Ok(GalleryEntry {
            id: record.id(),
            class_label: record.class_label.clone(),
            view: record.view,
            embedding: self.embed_feature_map(&fm)?,
        })
    }

    pub fn embed_all(&self, items: &[(Record, ImageBuffer)], steps: Steps, exec: Execution) -> Result<Vec<GalleryEntry>> {
        exec.try_map(items, |(record, img)| self.embed(img, record, steps))
    }
}

pub fn load_images(manifest: &Manifest, exec: Execution) -> Result<Vec<(Record, ImageBuffer)>> {
    exec.try_map(&manifest.records, |r| Ok((r.clone(), ImageBuffer::load(&manifest.resolve(r))?)))
}

/// Evaluates drone->satellite and satellite->drone retrieval on embeddings.
pub fn evaluate_both(entries: &[GalleryEntry], ks: &[usize], exec: Execution) -> Result<[EvalReport; 2]> {
    let split = |v: View| entries.iter().filter(|e| e.view == v).cloned().collect::<Vec<_>>();
    let drones = split(View::Drone);
    let satellites = split(View::Satellite);
    let d2s = evaluate(&drones, &build_index(satellites.clone())?, ks, exec)?;
    let s2d = evaluate(&satellites, &build_index(drones)?, ks, exec)?;
    Ok([d2s, s2d])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub steps: Steps,
    pub drone_to_satellite: EvalReport,
    pub satellite_to_drone: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub fingerprint: String,
    pub num_images: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, steps: Steps) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.steps == steps)
    }

    /// Merged text table, one line per (preprocessing, direction).
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# config {} images={}", self.fingerprint, self.num_images);
        if let Some(first) = self.rows.first() {
            let _ = writeln!(s, "{:<8}{:<20}{}", "method", "direction", first.drone_to_satellite.header());
        }
        for row in &self.rows {
            for rep in [&row.drone_to_satellite, &row.satellite_to_drone] {
                let _ = writeln!(s, "{:<8}{:<20}{}", row.steps.to_string(), rep.direction(), rep.row());
            }
        }
        s
    }

    pub fn records(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            for rep in [&row.drone_to_satellite, &row.satellite_to_drone] {
                for line in rep.records().lines() {
                    let _ = writeln!(s, "method={} {line}", row.steps);
                }
            }
        }
        s
    }
}

/// Short hash over the configuration and the manifest records (not the
/// root, so a moved dataset keeps its fingerprint).
pub fn fingerprint(cfg: &PipelineConfig, records: &[Record]) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(cfg.to_toml()?.as_bytes());
    let manifest = Manifest {
        root: PathBuf::from("."),
        records: records.to_vec(),
    };
    hasher.update(manifest.to_text()?.as_bytes());
    let digest = hasher.finalize();
    Ok(digest[..8].iter().fold(String::from("sha256:"), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// Runs the pipeline once per ablation row on already loaded images.
pub fn ablate_images(cfg: &PipelineConfig, items: &[(Record, ImageBuffer)], exec: Execution) -> Result<AblationReport> {
    let mut classes: Vec<&str> = items.iter().map(|(r, _)| r.class_label.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "ablation needs at least 2 classes, found {}",
            classes.len()
        )));
    }
    let embedder = Embedder::new(cfg)?;
    let records: Vec<Record> = items.iter().map(|(r, _)| r.clone()).collect();
    let mut rows = Vec::with_capacity(Steps::ABLATION.len());
    for steps in Steps::ABLATION {
        let entries = embedder.embed_all(items, steps, exec)?;
        let [d2s, s2d] = evaluate_both(&entries, &cfg.ks, exec)?;
        rows.push(AblationRow {
            steps,
            drone_to_satellite: d2s,
            satellite_to_drone: s2d,
        });
    }
    Ok(AblationReport {
        fingerprint: fingerprint(cfg, &records)?,
        num_images: items.len(),
        rows,
    })
}

pub fn ablate(cfg: &PipelineConfig, manifest: &Manifest, exec: Execution) -> Result<AblationReport> {
    let items = load_images(manifest, exec)?;
    ablate_images(cfg, &items, exec)
}
