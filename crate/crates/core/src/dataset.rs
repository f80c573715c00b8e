//! Dataset manifests, scanning of `<root>/<view>/<class>/<file>` trees, and a
//! generator of synthetic multi-view scenes with known headings.
//!
//! Manifest file: a `#root\t<path>` line followed by one record per line,
//! `path \t class \t view \t index \t heading`, where absent index or heading
//! is written `-` and `path` is relative to the root. A relative root is
//! resolved against the manifest's own directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::raster::{clip_channel, ImageBuffer, Rgb};
use crate::rng::SplitMix64;
use crate::view::View;

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub class_label: String,
    pub view: View,
    pub view_index: Option<u32>,
    /// Known capture heading in degrees, when the source provides one.
    pub heading_deg: Option<f64>,
}

impl Record {
    /// Stable identifier used for embeddings and gallery entries: the
    /// relative path without its extension, so it survives format changes
    /// between stages (`.png` -> `.fmap`).
    pub fn id(&self) -> String {
        self.path.with_extension("").to_string_lossy().replace('\\', "/")
    }

    /// Copy of the record pointing at `path`, everything else unchanged.
    pub fn with_path(&self, path: PathBuf) -> Record {
        Record {
            path,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn resolve(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn of_view(&self, view: View) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.view == view)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        let root = path_field(&self.root, "root")?;
        let _ = writeln!(s, "#root\t{root}");
        for r in &self.records {
            let path = path_field(&r.path, "path")?;
            if r.class_label.is_empty() || r.class_label.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidConfig(format!(
                    "class label {:?} must be non-empty without tabs or newlines",
                    r.class_label
                )));
            }
            let index = r.view_index.map_or("-".to_string(), |i| i.to_string());
            let heading = match r.heading_deg {
                Some(h) if !h.is_finite() => return Err(Error::NonFinite(h)),
                Some(h) => h.to_string(),
                None => "-".to_string(),
            };
            let _ = writeln!(s, "{path}\t{}\t{}\t{index}\t{heading}", r.class_label, r.view);
        }
        Ok(s)
    }

    /// Parses manifest text; `source` labels errors and anchors a relative root.
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Record {
            path: source.to_path_buf(),
            line,
            reason,
        };
        let mut root = None;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(r) = rest.strip_prefix("root\t") {
                    root = Some(PathBuf::from(r));
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, class, view, index, heading] = fields[..] else {
                return Err(bad(line_no, format!("expected 5 fields, found {}", fields.len())));
            };
            if path.is_empty() || class.is_empty() {
                return Err(bad(line_no, "empty path or class".into()));
            }
            let view: View = view.parse().map_err(|e: Error| bad(line_no, e.to_string()))?;
            let view_index = match index {
                "-" => None,
                s => Some(s.parse::<u32>().map_err(|e| bad(line_no, format!("index {s:?}: {e}")))?),
            };
            let heading_deg = match heading {
                "-" => None,
                s => {
                    let h = s
                        .parse::<f64>()
                        .map_err(|e| bad(line_no, format!("heading {s:?}: {e}")))?;
                    if !h.is_finite() {
                        return Err(bad(line_no, format!("non-finite heading {s}")));
                    }
                    Some(h)
                }
            };
            records.push(Record {
                path: PathBuf::from(path),
                class_label: class.to_string(),
                view,
                view_index,
                heading_deg,
            });
        }
        let root = root.ok_or_else(|| bad(0, "missing #root line".into()))?;
        Ok(Manifest { root, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_text()?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
            }
        }
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut m = Self::parse(&text, path)?;
        if m.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            m.root = base.join(&m.root);
        }
        Ok(m)
    }
}

fn path_field<'a>(p: &'a Path, what: &str) -> Result<&'a str> {
    match p.to_str() {
        Some(s) if !s.is_empty() && !s.contains(['\t', '\n', '\r']) => Ok(s),
        _ => Err(Error::InvalidConfig(format!(
            "{what} {} must be non-empty UTF-8 without tabs or newlines",
            p.display()
        ))),
    }
}

/// Trailing run of digits in a file stem, e.g. `img-07.png` -> 7.
pub fn trailing_index(file_name: &str) -> Option<u32> {
    let stem = Path::new(file_name).file_stem()?.to_str()?;
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    stem[stem.len() - digits..].parse().ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub manifest: Manifest,
    /// One message per drone file whose index could not be parsed.
    pub warnings: Vec<String>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        if let Some(name) = entry.file_name().to_str() {
            out.push((name.to_string(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Builds a manifest from `<root>/<view>/<class>/<file>`. Records are ordered
/// by class, then view directory, then file name.
pub fn scan_dataset(root: &Path) -> Result<ScanResult> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut keyed = Vec::new();
    let mut warnings = Vec::new();
    for (view_name, view_dir) in sorted_entries(root)? {
        if !view_dir.is_dir() {
            continue;
        }
        let view = View::from_dir_name(&view_name);
        for (class, class_dir) in sorted_entries(&view_dir)? {
            if !class_dir.is_dir() {
                continue;
            }
            for (file, file_path) in sorted_entries(&class_dir)? {
                if !file_path.is_file() {
                    continue;
                }
                let view_index = if view == View::Drone {
                    let idx = trailing_index(&file);
                    if idx.is_none() {
                        warnings.push(format!("no view index in {}", file_path.display()));
                    }
                    idx
                } else {
                    None
                };
                let record = Record {
                    path: PathBuf::from(&view_name).join(&class).join(&file),
                    class_label: class.clone(),
                    view,
                    view_index,
                    heading_deg: None,
                };
                keyed.push(((class.clone(), view_name.clone(), file), record));
            }
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(ScanResult {
        manifest: Manifest {
            root: root.to_path_buf(),
            records: keyed.into_iter().map(|(_, r)| r).collect(),
        },
        warnings,
    })
}

/// Synthetic scene set parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub seed: u64,
    pub num_classes: usize,
    pub views_per_class: usize,
    pub image_side: usize,
    /// Degrees between consecutive drone views; `None` spreads one orbit
    /// over the views (`360 / views_per_class`).
    pub heading_step_deg: Option<f64>,
    /// Maximum color-temperature shift, in `[0, 1]`.
    pub warm_cool_amplitude: f64,
    /// Maximum relative brightness change, in `[0, 1]`.
    pub brightness_amplitude: f64,
    /// Small clutter rectangles drawn over each drone view.
    pub occluder_count: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 10,
            views_per_class: 8,
            image_side: 96,
            heading_step_deg: None,
            warm_cool_amplitude: 0.25,
            brightness_amplitude: 0.3,
            occluder_count: 2,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.views_per_class == 0 {
            return Err(Error::InvalidConfig("need at least one class and one view".into()));
        }
        if self.image_side < 64 {
            return Err(Error::InvalidConfig(format!(
                "image side {} is below 64",
                self.image_side
            )));
        }
        for (name, a) in [
            ("warm/cool", self.warm_cool_amplitude),
            ("brightness", self.brightness_amplitude),
        ] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidConfig(format!("{name} amplitude {a} outside [0, 1]")));
            }
        }
        if let Some(step) = self.heading_step_deg {
            if !step.is_finite() {
                return Err(Error::NonFinite(step));
            }
        }
        Ok(())
    }

    pub fn heading_step(&self) -> f64 {
        self.heading_step_deg
            .unwrap_or(360.0 / self.views_per_class as f64)
    }

    pub fn heading(&self, index: u32) -> f64 {
        index as f64 * self.heading_step()
    }
}

// Stream labels for SplitMix64::derive.
const STREAM_LAYOUT: u64 = 1;
const STREAM_JITTER: u64 = 2;
const STREAM_OCCLUDER: u64 = 3;

/// Axis-aligned rectangle in world units (scene spans `[-1, 1]^2`, y up).
#[derive(Debug, Clone, Copy)]
struct Rect {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    color: [f64; 3],
}

impl Rect {
    fn contains(&self, u: f64, v: f64) -> bool {
        (u - self.cx).abs() < self.half_w && (v - self.cy).abs() < self.half_h
    }
}

#[derive(Debug, Clone, Copy)]
struct Grating {
    fu: f64,
    fv: f64,
    phase: f64,
    amplitude: f64,
}

/// Procedural top-down layout of one class.
#[derive(Debug, Clone)]
struct Scene {
    base: [f64; 3],
    gratings: Vec<Grating>,
    /// Painted in order; the target comes first so others may overlap it.
    rects: Vec<Rect>,
}

fn random_color(rng: &mut SplitMix64) -> [f64; 3] {
    [rng.uniform(30.0, 230.0), rng.uniform(30.0, 230.0), rng.uniform(30.0, 230.0)]
}

impl Scene {
    fn generate(seed: u64, class: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, &[class, STREAM_LAYOUT]);
        let base = [rng.uniform(70.0, 150.0), rng.uniform(70.0, 150.0), rng.uniform(70.0, 150.0)];
        let gratings = (0..3)
            .map(|_| {
                let freq = rng.uniform(2.0, 9.0);
                let theta = rng.uniform(0.0, std::f64::consts::TAU);
                Grating {
                    fu: freq * theta.cos(),
                    fv: freq * theta.sin(),
                    phase: rng.uniform(0.0, std::f64::consts::TAU),
                    amplitude: rng.uniform(5.0, 15.0),
                }
            })
            .collect();
        let mut rects = vec![Rect {
            cx: rng.uniform(-0.05, 0.05),
            cy: rng.uniform(-0.05, 0.05),
            half_w: rng.uniform(0.12, 0.22),
            half_h: rng.uniform(0.12, 0.22),
            color: random_color(&mut rng),
        }];
        let count = rng.range_inclusive(5, 12);
        for _ in 1..count {
            // Centers inside the inscribed circle so every building survives
            // the circular crop.
            let r = 0.8 * rng.next_f64().sqrt();
            let a = rng.uniform(0.0, std::f64::consts::TAU);
            rects.push(Rect {
                cx: r * a.cos(),
                cy: r * a.sin(),
                half_w: rng.uniform(0.04, 0.16),
                half_h: rng.uniform(0.04, 0.16),
                color: random_color(&mut rng),
            });
        }
        Self { base, gratings, rects }
    }

    fn color_at(&self, u: f64, v: f64) -> [f64; 3] {
        if let Some(r) = self.rects.iter().rev().find(|r| r.contains(u, v)) {
            return r.color;
        }
        let texture: f64 = self
            .gratings
            .iter()
            .map(|g| g.amplitude * (std::f64::consts::PI * (g.fu * u + g.fv * v) + g.phase).sin())
            .sum();
        self.base.map(|b| b + texture)
    }

    /// Renders the scene as seen with the camera yawed by `heading_deg`:
    /// the content appears rotated by `+heading_deg`, so rotating the image
    /// by `-heading_deg` restores the north-up layout.
    fn render(&self, side: usize, heading_deg: f64, jitter: [f64; 3]) -> Result<ImageBuffer> {
        let (sin, cos) = heading_deg.to_radians().sin_cos();
        let c = side as f64 / 2.0 - 0.5;
        let radius = side as f64 / 2.0;
        let mut pixels = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let u = (x as f64 - c) / radius;
                let v = (c - y as f64) / radius;
                let wu = cos * u + sin * v;
                let wv = -sin * u + cos * v;
                let color = self.color_at(wu, wv);
                pixels.push([
                    clip_channel(color[0] * jitter[0])?,
                    clip_channel(color[1] * jitter[1])?,
                    clip_channel(color[2] * jitter[2])?,
                ]);
            }
        }
        ImageBuffer::new(side, side, pixels)
    }
}

/// Per-channel gains for one image: a warm/cool shift on red and blue times
/// a global brightness change.
fn style_jitter(params: &SceneParams, class: u64, slot: u64) -> [f64; 3] {
    let mut rng = SplitMix64::derive(params.seed, &[class, slot, STREAM_JITTER]);
    let t = rng.uniform(-params.warm_cool_amplitude, params.warm_cool_amplitude);
    let b = 1.0 + rng.uniform(-params.brightness_amplitude, params.brightness_amplitude);
    [(1.0 + t) * b, b, (1.0 - t) * b]
}

fn draw_occluders(img: &mut ImageBuffer, params: &SceneParams, class: u64, slot: u64) {
    let mut rng = SplitMix64::derive(params.seed, &[class, slot, STREAM_OCCLUDER]);
    let side = img.width();
    for _ in 0..params.occluder_count {
        let w = rng.range_inclusive(side as u64 / 16, side as u64 / 8) as usize;
        let h = rng.range_inclusive(side as u64 / 16, side as u64 / 8) as usize;
        let x0 = rng.range_inclusive(0, (side - w) as u64) as usize;
        let y0 = rng.range_inclusive(0, (side - h) as u64) as usize;
        let shade = rng.range_inclusive(20, 90) as u8;
        let color: Rgb = [shade, shade.saturating_add(10), shade];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.set(x, y, color);
            }
        }
    }
}

pub fn class_label(class: usize) -> String {
    format!("{:04}", class)
}

/// Renders one class: its satellite image and every drone view.
pub fn render_class(params: &SceneParams, class: usize) -> Result<Vec<(Record, ImageBuffer)>> {
    let scene = Scene::generate(params.seed, class as u64);
    let label = class_label(class);
    let mut out = Vec::with_capacity(1 + params.views_per_class);
    let satellite = scene.render(params.image_side, 0.0, style_jitter(params, class as u64, 0))?;
    out.push((
        Record {
            path: PathBuf::from("satellite").join(&label).join(format!("{label}.png")),
            class_label: label.clone(),
            view: View::Satellite,
            view_index: None,
            heading_deg: Some(0.0),
        },
        satellite,
    ));
    for index in 0..params.views_per_class as u32 {
        let slot = index as u64 + 1;
        let heading = params.heading(index);
        let mut img = scene.render(params.image_side, heading, style_jitter(params, class as u64, slot))?;
        draw_occluders(&mut img, params, class as u64, slot);
        out.push((
            Record {
                path: PathBuf::from("drone").join(&label).join(format!("image-{index:02}.png")),
                class_label: label.clone(),
                view: View::Drone,
                view_index: Some(index),
                heading_deg: Some(heading),
            },
            img,
        ));
    }
    Ok(out)
}

/// Renders every class in memory; records are in class order.
pub fn render_scene_set(params: &SceneParams, exec: Execution) -> Result<Vec<(Record, ImageBuffer)>> {
    params.validate()?;
    let per_class = exec.try_map(&(0..params.num_classes).collect::<Vec<_>>(), |&c| {
        render_class(params, c)
    })?;
    Ok(per_class.into_iter().flatten().collect())
}

/// Writes the scene set as PNGs plus `manifest.tsv` under `out_dir`.
pub fn generate_scene_set(params: &SceneParams, out_dir: &Path, exec: Execution) -> Result<Manifest> {
    params.validate()?;
    let classes: Vec<usize> = (0..params.num_classes).collect();
    let per_class = exec.try_map(&classes, |&c| -> Result<Vec<Record>> {
        let rendered = render_class(params, c)?;
        let mut records = Vec::with_capacity(rendered.len());
        for (record, img) in rendered {
            img.save(&out_dir.join(&record.path))?;
            records.push(record);
        }
        Ok(records)
    })?;
    let manifest = Manifest {
        root: PathBuf::from("."),
        records: per_class.into_iter().flatten().collect(),
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(Manifest {
        root: out_dir.to_path_buf(),
        ..manifest
    })
}
