use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geoalign::dataset::{generate_scene_set, scan_dataset, Manifest, Record, SceneParams, MANIFEST_FILE};
use geoalign::features::{read_feature_map, write_feature_map, ToyExtractor, ToyExtractorConfig};
use geoalign::pipeline::{ablate, orient, PipelineConfig, ProjectionConfig};
use geoalign::retrieval::{build_index, evaluate, rank, read_embeddings, write_embeddings, GalleryEntry};
use geoalign::spatial::{align_by_heading, align_view, circular_crop, RotationPolicy};
use geoalign::style::{align_style, compute_dataset_target, StyleConfig};
use geoalign::{Execution, ImageBuffer, View};

use crate::{
    AblateArgs, Cli, Command, CropRotateArgs, EvaluateArgs, ExtractArgs, GenSyntheticArgs, IndexArgs, Io,
    PoolArgs, QueryArgs, ScanArgs, StyleAlignArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let exec = configure_jobs(cli.jobs)?;
    match cli.command {
        Command::StyleAlign(a) => style_align(a, exec),
        Command::CropRotate(a) => crop_rotate(a, exec),
        Command::Extract(a) => extract(a, exec),
        Command::Pool(a) => pool(a, exec),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Evaluate(a) => evaluate_cmd(a, exec),
        Command::Scan(a) => scan(a),
        Command::GenSynthetic(a) => gen_synthetic(a, exec),
        Command::Ablate(a) => ablate_cmd(a, exec),
    }
}

fn configure_jobs(jobs: Option<usize>) -> Result<Execution> {
    match jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(1) => Ok(Execution::Sequential),
        Some(_n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(_n)
                .build_global()
                .context("configuring worker pool")?;
            Ok(Execution::Parallel)
        }
        None => Ok(Execution::Parallel),
    }
}

enum Mode<'a> {
    Single { input: &'a Path, output: &'a Path },
    Batch { manifest: Manifest, out_dir: &'a Path },
}

fn io_mode(io: &Io) -> Result<Mode<'_>> {
    match (&io.input, &io.output, &io.manifest, &io.out_dir) {
        (Some(input), Some(output), None, None) => Ok(Mode::Single { input, output }),
        (None, None, Some(manifest), Some(out_dir)) => Ok(Mode::Batch {
            manifest: Manifest::read(manifest)?,
            out_dir,
        }),
        _ => bail!("give either --input and --output, or --manifest and --out-dir"),
    }
}

/// Applies `f` to every manifest image, writing each result under `out_dir`
/// with the record's relative path and extension `ext`, plus a new manifest.
fn batch_map<T, F, W>(manifest: &Manifest, out_dir: &Path, ext: &str, exec: Execution, f: F, write: W) -> Result<Manifest>
where
    T: Send,
    F: Fn(&Record, ImageBuffer) -> geoalign::Result<T> + Sync + Send,
    W: Fn(&T, &Path) -> geoalign::Result<()> + Sync + Send,
{
    let records = exec.try_map(&manifest.records, |r| -> geoalign::Result<Record> {
        let img = ImageBuffer::load(&manifest.resolve(r))?;
        let out = f(r, img)?;
        let rel = r.path.with_extension(ext);
        write(&out, &out_dir.join(&rel))?;
        Ok(r.with_path(rel))
    })?;
    let out = Manifest {
        root: PathBuf::from("."),
        records,
    };
    out.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(out)
}

fn save_image(img: &ImageBuffer, path: &Path) -> geoalign::Result<()> {
    img.save(path)
}

fn style_align(a: StyleAlignArgs, exec: Execution) -> Result<()> {
    let mut cfg = StyleConfig {
        s_target: a.target,
        correction_strength: a.strength,
        bias_sign: a.bias_sign,
        ..StyleConfig::default()
    };
    match io_mode(&a.io)? {
        Mode::Single { input, output } => {
            if a.target_from_dataset {
                bail!("--target-from-dataset needs --manifest");
            }
            let img = ImageBuffer::load(input)?;
            align_style(&img, &cfg)?.save(output)?;
        }
        Mode::Batch { manifest, out_dir } => {
            if a.target_from_dataset {
                let images = exec.try_map(&manifest.records, |r| ImageBuffer::load(&manifest.resolve(r)))?;
                cfg.s_target = compute_dataset_target(&images)?;
                eprintln!("dataset target luminance {:.4}", cfg.s_target);
            }
            cfg.validate()?;
            batch_map(&manifest, out_dir, "png", exec, |_, img| align_style(&img, &cfg), save_image)?;
        }
    }
    Ok(())
}

fn crop_rotate(a: CropRotateArgs, exec: Execution) -> Result<()> {
    let policy = RotationPolicy {
        degrees_per_index: a.degrees_per_index,
        reference_heading_deg: a.reference_deg,
        interpolation: a.interp,
        fill: a.fill,
    };
    policy.validate()?;
    match io_mode(&a.io)? {
        Mode::Single { input, output } => {
            let img = ImageBuffer::load(input)?;
            let out = match (a.index, a.heading_deg) {
                (Some(i), _) => align_view(&img, i, &policy)?,
                (None, Some(h)) => align_by_heading(&img, h, &policy)?,
                (None, None) => circular_crop(&img, policy.fill)?,
            };
            out.save(output)?;
        }
        Mode::Batch { manifest, out_dir } => {
            if a.index.is_some() || a.heading_deg.is_some() {
                bail!("--index/--heading-deg apply to single-file mode; batch mode reads them from the manifest");
            }
            batch_map(&manifest, out_dir, "png", exec, |r, img| orient(&img, r, &policy), save_image)?;
        }
    }
    Ok(())
}

fn extract(a: ExtractArgs, exec: Execution) -> Result<()> {
    let extractor = ToyExtractor::new(&ToyExtractorConfig {
        seed: a.seed,
        channel_plan: a.channels,
    })?;
    match io_mode(&a.io)? {
        Mode::Single { input, output } => {
            let fm = extractor.extract(&ImageBuffer::load(input)?)?;
            write_feature_map(&fm, output)?;
        }
        Mode::Batch { manifest, out_dir } => {
            batch_map(&manifest, out_dir, "fmap", exec, |_, img| extractor.extract(&img), write_feature_map)?;
        }
    }
    Ok(())
}

fn pool(a: PoolArgs, exec: Execution) -> Result<()> {
    let projection = match (a.proj_seed, &a.proj_weights) {
        (Some(seed), _) => Some(ProjectionConfig::Seeded {
            seed,
            out_dim: a.proj_dim,
        }),
        (None, Some(path)) => Some(ProjectionConfig::Loaded { path: path.clone() }),
        (None, None) => None,
    };
    let cfg = PipelineConfig {
        strategy: a.strategy,
        mode: a.mode,
        projection,
        ..PipelineConfig::default()
    };
    let embedder = geoalign::pipeline::Embedder::new(&cfg)?;
    let entries = match (&a.input, &a.manifest) {
        (Some(input), None) => {
            let fm = read_feature_map(input)?;
            let id = input.with_extension("").to_string_lossy().into_owned();
            vec![GalleryEntry {
                id,
                class_label: "-".into(),
                view: View::Other,
                embedding: embedder.embed_feature_map(&fm)?,
            }]
        }
        (None, Some(manifest)) => {
            let manifest = Manifest::read(manifest)?;
            exec.try_map(&manifest.records, |r| -> geoalign::Result<GalleryEntry> {
                let fm = read_feature_map(&manifest.resolve(r))?;
                Ok(GalleryEntry {
                    id: r.id(),
                    class_label: r.class_label.clone(),
                    view: r.view,
                    embedding: embedder.embed_feature_map(&fm)?,
                })
            })?
        }
        _ => bail!("give either --input or --manifest"),
    };
    match &a.out {
        Some(out) => write_embeddings(&entries, out)?,
        None => print!("{}", geoalign::retrieval::format_embeddings(&entries)?),
    }
    Ok(())
}

fn load_entries(path: &Path, view: Option<View>) -> Result<Vec<GalleryEntry>> {
    let mut entries = read_embeddings(path)?;
    if let Some(v) = view {
        entries.retain(|e| e.view == v);
    }
    Ok(entries)
}

fn index(a: IndexArgs) -> Result<()> {
    let idx = build_index(load_entries(&a.embeddings, a.view)?)?;
    write_embeddings(idx.entries(), &a.out)?;
    eprintln!("indexed {} entries of dim {}", idx.len(), idx.dim());
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let idx = build_index(read_embeddings(&a.index)?)?;
    let mut queries = read_embeddings(&a.embeddings)?;
    if let Some(id) = &a.id {
        queries.retain(|q| &q.id == id);
        if queries.is_empty() {
            bail!("no query with id {id:?} in {}", a.embeddings.display());
        }
    }
    let mut out = std::io::stdout().lock();
    for q in &queries {
        for (r, hit) in rank(&q.embedding, &idx)?.iter().take(a.top).enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}\t{:.6}", q.id, r + 1, hit.id, hit.class_label, hit.score)?;
        }
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, exec: Execution) -> Result<()> {
    let idx = build_index(read_embeddings(&a.index)?)?;
    let queries = load_entries(&a.queries, a.query_view)?;
    let report = evaluate(&queries, &idx, &a.k, exec)?;
    if !report.excluded.is_empty() {
        eprintln!("{} queries without a positive in the gallery were excluded", report.excluded.len());
    }
    print!("{}", report.table());
    if a.records {
        print!("{}", report.records());
    }
    Ok(())
}

fn scan(a: ScanArgs) -> Result<()> {
    let result = scan_dataset(&a.root)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    match &a.out {
        Some(out) => {
            // Store an absolute root so the manifest can live anywhere.
            let mut m = result.manifest;
            m.root = std::fs::canonicalize(&m.root).with_context(|| format!("resolving {}", m.root.display()))?;
            m.write(out)?;
            eprintln!("{} records", m.records.len());
        }
        None => print!("{}", result.manifest.to_text()?),
    }
    Ok(())
}

fn gen_synthetic(a: GenSyntheticArgs, exec: Execution) -> Result<()> {
    let params = SceneParams {
        seed: a.seed,
        num_classes: a.classes,
        views_per_class: a.views,
        image_side: a.side,
        heading_step_deg: a.heading_step,
        warm_cool_amplitude: a.warm_cool,
        brightness_amplitude: a.brightness,
        occluder_count: a.occluders,
    };
    let m = generate_scene_set(&params, &a.out_dir, exec)?;
    eprintln!("wrote {} images and {}", m.records.len(), a.out_dir.join(MANIFEST_FILE).display());
    Ok(())
}

fn ablate_cmd(a: AblateArgs, exec: Execution) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = a.strategy {
        cfg.strategy = s;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(seed) = a.seed {
        cfg.extractor.seed = seed;
    }
    if let Some(k) = a.k {
        cfg.ks = k;
    }
    cfg.validate()?;
    if a.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let manifest_path = a.manifest.expect("required by clap");
    let manifest = Manifest::read(&manifest_path)?;
    let report = ablate(&cfg, &manifest, exec)?;
    print!("{}", report.table());
    if a.records {
        print!("{}", report.records());
    }
    Ok(())
}
