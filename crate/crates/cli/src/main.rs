mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoalign::partition::{parse_strategy, DescriptorMode, PartitionStrategy};
use geoalign::spatial::Interpolation;
use geoalign::style::BiasSign;
use geoalign::{Rgb, View};

/// Drone-to-satellite geo-localization pipeline.
///
/// Stages compose through files: images, FMAP feature maps, manifests
/// (`manifest.tsv`) and embedding files. Batch stages read a manifest and
/// write one output per record plus a new manifest into `--out-dir`.
#[derive(Debug, Parser)]
#[command(name = "geoalign", version)]
struct Cli {
    /// Worker threads for per-image stages (default: number of processors).
    /// 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize luminance and color cast of images.
    StyleAlign(StyleAlignArgs),
    /// Mask images to their inscribed circle and rotate them to the reference heading.
    ///
    /// Positive angles turn the content counterclockwise as displayed (y up).
    /// A drone view with index i is rotated by
    /// reference - i * degrees-per-index; with --heading-deg h by reference - h.
    CropRotate(CropRotateArgs),
    /// Compute feature maps with the built-in deterministic extractor.
    Extract(ExtractArgs),
    /// Pool feature maps into retrieval embeddings.
    Pool(PoolArgs),
    /// Build a normalized gallery index from an embedding file.
    Index(IndexArgs),
    /// Rank gallery entries for query embeddings.
    Query(QueryArgs),
    /// Compute Recall@K and mAP of queries against a gallery index.
    Evaluate(EvaluateArgs),
    /// Build a manifest from a <root>/<view>/<class>/<file> tree.
    Scan(ScanArgs),
    /// Render a synthetic multi-view scene set.
    GenSynthetic(GenSyntheticArgs),
    /// Run the preprocessing ablation (none, C, C+R, C+R+A) end to end.
    Ablate(AblateArgs),
}

/// Single-file (`--input`/`--output`) or batch (`--manifest`/`--out-dir`) IO.
#[derive(Debug, Args)]
struct Io {
    /// Input file (single-file mode).
    #[arg(long, conflicts_with = "manifest", requires = "output")]
    input: Option<PathBuf>,
    /// Output file (single-file mode).
    #[arg(long, requires = "input")]
    output: Option<PathBuf>,
    /// Input manifest (batch mode).
    #[arg(long, requires = "out_dir")]
    manifest: Option<PathBuf>,
    /// Output directory (batch mode); receives a new manifest.tsv.
    #[arg(long, requires = "manifest")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StyleAlignArgs {
    #[command(flatten)]
    io: Io,
    /// Target mean luminance.
    #[arg(long, default_value_t = 128.0)]
    target: f64,
    /// In batch mode, use the mean luminance of all manifest images as target.
    #[arg(long, conflicts_with = "target")]
    target_from_dataset: bool,
    /// Fraction of the channel bias that is corrected, in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    /// attenuate | amplify
    #[arg(long, default_value = "attenuate")]
    bias_sign: BiasSign,
}

#[derive(Debug, Args)]
struct CropRotateArgs {
    #[command(flatten)]
    io: Io,
    /// View index of the input (single-file mode).
    #[arg(long, conflicts_with = "heading_deg")]
    index: Option<u32>,
    /// Measured heading of the input in degrees (single-file mode).
    #[arg(long, allow_hyphen_values = true)]
    heading_deg: Option<f64>,
    #[arg(long, default_value_t = 360.0 / 54.0)]
    degrees_per_index: f64,
    /// Heading of the reference (satellite) view.
    #[arg(long, default_value_t = 0.0)]
    reference_deg: f64,
    /// nearest | bilinear
    #[arg(long, default_value = "bilinear")]
    interp: Interpolation,
    /// Color outside the circle, as R,G,B.
    #[arg(long, default_value = "0,0,0", value_parser = parse_rgb)]
    fill: Rgb,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    io: Io,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output channels of each conv stage.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    channels: Vec<usize>,
}

#[derive(Debug, Args)]
struct PoolArgs {
    /// One FMAP file; its embedding is printed (or written to --out).
    #[arg(long, conflicts_with = "manifest")]
    input: Option<PathBuf>,
    /// Manifest of FMAP files.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Embedding file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Regular "n+n" or dense "nxn".
    #[arg(long, default_value = "4x4", value_parser = parse_strategy_arg)]
    strategy: PartitionStrategy,
    /// global-only | parts-only | concat
    #[arg(long, default_value = "concat")]
    mode: DescriptorMode,
    /// Project part vectors with seeded random weights.
    #[arg(long, conflicts_with = "proj_weights")]
    proj_seed: Option<u64>,
    /// Output dimension of the seeded projection.
    #[arg(long, default_value_t = 512)]
    proj_dim: usize,
    /// Project part vectors with weights from an FMAP file (C=1, H=out, W=in).
    #[arg(long)]
    proj_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Keep only entries of this view (drone, satellite, ground, other).
    #[arg(long)]
    view: Option<View>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Embedding file holding the queries.
    #[arg(long)]
    embeddings: PathBuf,
    /// Only rank the query with this id.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    index: PathBuf,
    /// Embedding file holding the queries.
    #[arg(long)]
    queries: PathBuf,
    /// Keep only queries of this view.
    #[arg(long)]
    query_view: Option<View>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    /// Also print key=value records.
    #[arg(long)]
    records: bool,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[arg(long)]
    root: PathBuf,
    /// Manifest to write (default: print to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenSyntheticArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Drone views per class.
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 96)]
    side: usize,
    /// Degrees between drone views (default: 360 / views).
    #[arg(long)]
    heading_step: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    warm_cool: f64,
    #[arg(long, default_value_t = 0.3)]
    brightness: f64,
    #[arg(long, default_value_t = 2)]
    occluders: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Manifest of the image set (e.g. from gen-synthetic or scan).
    #[arg(long, required_unless_present = "print_config")]
    manifest: Option<PathBuf>,
    /// Pipeline config file (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy_arg)]
    strategy: Option<PartitionStrategy>,
    #[arg(long)]
    mode: Option<DescriptorMode>,
    /// Extractor seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Also print key=value records.
    #[arg(long)]
    records: bool,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn parse_strategy_arg(s: &str) -> Result<PartitionStrategy, String> {
    parse_strategy(s).map_err(|e| e.to_string())
}

fn parse_rgb(s: &str) -> Result<Rgb, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [r, g, b] = parts[..] else {
        return Err(format!("expected R,G,B, got {s:?}"));
    };
    let channel = |v: &str| v.trim().parse::<u8>().map_err(|e| format!("{v:?}: {e}"));
    Ok([channel(r)?, channel(g)?, channel(b)?])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
