//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 input or parse error, 3 partial
//! failure (some samples failed; outputs and report were written), 4 internal
//! error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::augment::{
    load_background_pool, run_augmentation, BackgroundMode, ManifestEntry, MeshLoader, MeshRedirector,
    SamplingMode, TargetCenter,
};
use crate::camnorm::{normalize_sample, CameraIntrinsics, HeadPose};
use crate::error::{Error, Result};
use crate::evalharness::{
    diff_csv, make_image_pairs, pattern_target, read_report, redirect_to_angle, redirect_to_image, report,
    report_diff, write_report, EvalRun, ManifestFrames, PairFeatures,
};
use crate::geometry::{angular_error, direction_to_vector, Direction, Rotation3, UnitVector3};
use crate::io::config::{read_config, RunConfig};
use crate::io::features::read_feature_set;
use crate::io::image::{read_png, write_png};
use crate::io::latent::{read_latents, write_latents};
use crate::io::manifest::{read_manifest, read_raw_samples, write_manifest};
use crate::metrics::{fid, mixed_rec_loss, ms_ssim_with, total_loss, LossWeights, MsSsimConfig};
use crate::raster::BackgroundSource;
use crate::redirect::{
    redirect, CommandEstimator, Estimator, Frame, IdentityRedirector, LatentRedirector, OracleDecoder, OracleEncoder,
    OracleEstimator, RedirectPattern, RedirectRequest, Redirector,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "gazeaug", version, about = "Rotation-based face augmentation and redirection evaluation")]
pub struct Cli {
    /// Seed for every random draw
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Run configuration file; command-line flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Read and print angles in degrees instead of radians
    #[arg(long, global = true)]
    pub degrees: bool,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Warp raw captures to the normalized camera
    Normalize(NormalizeArgs),
    /// Rotate and re-render faces to new head or gaze directions
    Augment(AugmentArgs),
    /// Draw directions uniformly from a disk
    SampleTargets(SampleTargetsArgs),
    /// Redirect one manifest row, or replay a latent dump through the embedding transform
    Redirect(RedirectArgs),
    /// Redirect-to-angle evaluation
    EvalAngle(EvalAngleArgs),
    /// Redirect-to-image evaluation
    EvalImage(EvalImageArgs),
    /// Compute a single metric
    #[command(subcommand)]
    Metric(MetricCommand),
    /// Treatment minus baseline for two report directories
    ReportDiff(ReportDiffArgs),
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Raw samples (JSON lines with head pose, face center and gaze vector)
    #[arg(long)]
    pub raw: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Intrinsics `fx,fy,cx,cy` used for cameras not listed in the config
    #[arg(long)]
    pub intrinsics: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Head,
    Gaze,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackgroundArg {
    Solid,
    Pool,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Input manifest; mesh and image paths are relative to its directory
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sampling mode [default: head]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Target disk radius in degrees [default: 60]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Disk center: frontal, source, or pitch,yaw in degrees [default: frontal]
    #[arg(long)]
    pub center: Option<String>,
    /// Augmented images per source [default: 10]
    #[arg(long)]
    pub targets: Option<usize>,
    /// Sources drawn per subject [default: 30]
    #[arg(long)]
    pub sources: Option<usize>,
    /// Subjects with fewer samples are skipped [default: 30]
    #[arg(long)]
    pub min_samples: Option<usize>,
    /// Background fill [default: solid]
    #[arg(long, value_enum)]
    pub background: Option<BackgroundArg>,
    /// Directory of PNG backgrounds for `--background pool`
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleTargetsArgs {
    /// Disk center `pitch,yaw` [default: 0,0]
    #[arg(long, allow_hyphen_values = true)]
    pub center: Option<String>,
    /// Disk radius in degrees
    #[arg(long, default_value_t = 60.0)]
    pub radius: f64,
    /// Number of directions
    #[arg(long, default_value_t = 10)]
    pub count: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PatternArg {
    Both,
    GazeOnly,
    HeadOnly,
}

impl From<PatternArg> for RedirectPattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Both => RedirectPattern::Both,
            PatternArg::GazeOnly => RedirectPattern::GazeOnly,
            PatternArg::HeadOnly => RedirectPattern::HeadOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct RedirectArgs {
    /// Manifest holding the source row (mesh mode)
    #[arg(long, conflicts_with = "latents")]
    pub manifest: Option<PathBuf>,
    /// Source row, 0-based (mesh mode)
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    /// Latent dump to transform (latent mode)
    #[arg(long)]
    pub latents: Option<PathBuf>,
    /// Target direction `pitch,yaw`
    #[arg(long, allow_hyphen_values = true)]
    pub target: String,
    /// Redirection pattern
    #[arg(long, value_enum, default_value = "both")]
    pub pattern: PatternArg,
    /// Output PNG (mesh mode) or latent dump (latent mode)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum RedirectorArg {
    /// Rotate and re-render the source mesh
    Mesh,
    /// Return the source image unchanged
    Identity,
    /// Oracle encoder, embedding transform, oracle decoder
    Latent,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum EstimatorArg {
    /// Read labels carried alongside the image
    Oracle,
    /// Run `--estimator-cmd` per image
    Command,
}

#[derive(Debug, Args)]
pub struct InterfaceArgs {
    /// Redirector
    #[arg(long, value_enum, default_value = "mesh")]
    pub redirector: RedirectorArg,
    /// Estimator
    #[arg(long, value_enum, default_value = "oracle")]
    pub estimator: EstimatorArg,
    /// External estimator command; `{image}` and `{out}` are substituted
    #[arg(long)]
    pub estimator_cmd: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Input manifest; image and mesh paths are relative to its directory
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Report directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Targets per source [default: 10]
    #[arg(long)]
    pub targets: Option<usize>,
    /// Sources per subject [default: 20]
    #[arg(long)]
    pub sources: Option<usize>,
    /// Error-vs-angle bin width in degrees [default: 10]
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// MS-SSIM weight of the mixed reconstruction metric [default: 0.84]
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub interfaces: InterfaceArgs,
}

#[derive(Debug, Args)]
pub struct EvalAngleArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Redirection pattern [default: both]
    #[arg(long, value_enum)]
    pub pattern: Option<PatternArg>,
    /// Target disk radius in degrees [default: 60]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Disk center: frontal, source, or pitch,yaw in degrees [default: frontal]
    #[arg(long)]
    pub center: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalImageArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Features of the redirected images, one row per pair (GZFT)
    #[arg(long, requires = "features_target")]
    pub features_generated: Option<PathBuf>,
    /// Features of the target images, one row per pair (GZFT)
    #[arg(long, requires = "features_generated")]
    pub features_target: Option<PathBuf>,
    /// Also write redirected images to `<out>/images/`
    #[arg(long)]
    pub save_images: bool,
}

#[derive(Debug, Subcommand)]
pub enum MetricCommand {
    /// Fréchet distance between two feature files
    Fid { a: PathBuf, b: PathBuf },
    /// MS-SSIM between two PNG images
    Msssim {
        a: PathBuf,
        b: PathBuf,
        /// Number of scales [default: as many of 5 as the image size allows]
        #[arg(long)]
        scales: Option<usize>,
    },
    /// Angle between two directions `pitch,yaw`
    Angular {
        #[arg(allow_hyphen_values = true)]
        a: String,
        #[arg(allow_hyphen_values = true)]
        b: String,
    },
    /// alpha·(1 − MS-SSIM) + (1 − alpha)·L1 between two PNG images
    MixedLoss {
        a: PathBuf,
        b: PathBuf,
        /// MS-SSIM weight [default: 0.84]
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// L_sted + lambda_id·L_id + lambda_rec·L_rec
    TotalLoss {
        #[arg(long, allow_hyphen_values = true)]
        sted: f64,
        #[arg(long, allow_hyphen_values = true)]
        id: f64,
        #[arg(long, allow_hyphen_values = true)]
        rec: f64,
        /// [default: 2]
        #[arg(long)]
        lambda_id: Option<f64>,
        /// [default: 200]
        #[arg(long)]
        lambda_rec: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct ReportDiffArgs {
    pub baseline: PathBuf,
    pub treatment: PathBuf,
    /// Also write `diff.json` and `diff.csv` here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_INTERNAL;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    cfg.augment.seed = cli.seed;
    cfg.protocol.seed = cli.seed;
    match &cli.command {
        Command::Normalize(a) => normalize_cmd(a, &cfg),
        Command::Augment(a) => augment_cmd(a, cfg),
        Command::SampleTargets(a) => sample_targets_cmd(a, cli),
        Command::Redirect(a) => redirect_cmd(a, cli, &cfg),
        Command::EvalAngle(a) => eval_angle_cmd(a, cfg),
        Command::EvalImage(a) => eval_image_cmd(a, cfg),
        Command::Metric(m) => metric_cmd(m, cli, &cfg),
        Command::ReportDiff(a) => report_diff_cmd(a),
    }
}

fn required(flag: Option<&PathBuf>, from_config: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(from_config)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument(format!("--{name} is required (or set it under [paths])")))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses `pitch,yaw` in the unit selected by `--degrees`.
fn parse_direction(s: &str, degrees: bool) -> Result<Direction> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let values: Vec<f64> = parts.iter().filter_map(|p| p.parse::<f64>().ok()).collect();
    if parts.len() != 2 || values.len() != 2 || !values.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!("expected 'pitch,yaw', got '{s}'")));
    }
    let d = if degrees {
        Direction::from_degrees(values[0], values[1])
    } else {
        Direction::new(values[0], values[1])
    };
    d.validate()
}

fn show_direction(d: Direction, degrees: bool) -> Value {
    if degrees {
        let (p, y) = d.to_degrees();
        json!([p, y])
    } else {
        json!([d.pitch, d.yaw])
    }
}

fn print_json(value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    crate::io::write_bytes(path, text.as_bytes())
}

fn normalize_cmd(a: &NormalizeArgs, cfg: &RunConfig) -> Result<i32> {
    let raw_path = required(a.raw.as_ref(), cfg.paths.raw.as_ref(), "raw")?;
    let out = required(a.out.as_ref(), cfg.paths.out.as_ref(), "out")?;
    let fallback = match &a.intrinsics {
        Some(s) => {
            let v: Vec<f64> = s.split(',').filter_map(|p| p.trim().parse().ok()).collect();
            if v.len() != 4 {
                return Err(Error::InvalidArgument(format!("--intrinsics expects fx,fy,cx,cy, got '{s}'")));
            }
            Some(CameraIntrinsics::new(v[0], v[1], v[2], v[3])?)
        }
        None => None,
    };
    let spec = cfg.normalization;
    spec.validate()?;
    let raw = read_raw_samples(&raw_path)?;
    let base = base_dir(&raw_path);

    use rayon::prelude::*;
    let results: Vec<Result<(ManifestEntry, [u8; 72], crate::raster::ImageBuffer)>> = raw
        .par_iter()
        .enumerate()
        .map(|(row, s)| {
            let k = cfg
                .cameras
                .get(&s.camera)
                .copied()
                .or(fallback)
                .ok_or_else(|| Error::InvalidArgument(format!("no intrinsics for camera '{}'", s.camera)))?;
            let rotation = Rotation3::from_row_major(&s.head_rotation, 1e-6)?;
            let head = HeadPose::new(rotation, s.head_translation.into());
            let gaze = UnitVector3::try_from_vector(s.gaze_vector.into(), 1e-6)?;
            let image = read_png(&base.join(&s.image))?;
            let n = normalize_sample(&image, &k, &head, &gaze, &s.face_center.into(), &spec)?;
            let entry = ManifestEntry {
                subject_id: s.subject.clone(),
                image_path: format!("images/{row:07}.png"),
                mesh_path: s.mesh.clone(),
                head: n.head,
                gaze: n.gaze,
                camera_id: s.camera.clone(),
            };
            entry.validate()?;
            Ok((entry, n.warp.to_le_bytes(), n.image))
        })
        .collect();

    let mut entries = Vec::new();
    let mut warps = Vec::new();
    let mut failures = Vec::new();
    for (row, r) in results.into_iter().enumerate() {
        match r {
            Ok((entry, warp, image)) => {
                write_png(&out.join(&entry.image_path), &image)?;
                warps.extend_from_slice(&warp);
                entries.push(entry);
            }
            Err(e) => {
                log::warn!("row {row}: {e}");
                failures.push(json!({"row": row, "reason": e.to_string()}));
            }
        }
    }
    copy_meshes(&base, &out, &mut entries)?;
    write_manifest(&out.join("manifest.jsonl"), &entries)?;
    crate::io::write_bytes(&out.join("homographies.bin"), &warps)?;
    let failed = failures.len();
    write_json(
        &out.join("report.json"),
        &json!({"planned": raw.len(), "succeeded": entries.len(), "failed": failed, "failures": failures}),
    )?;
    log::info!("normalized {} of {} samples", entries.len(), raw.len());
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

/// Makes mesh paths valid relative to the output manifest: plain relative
/// paths are copied under `out`, anything else becomes absolute.
fn copy_meshes(base: &Path, out: &Path, entries: &mut [ManifestEntry]) -> Result<()> {
    let mut copied = std::collections::BTreeSet::new();
    for e in entries.iter_mut() {
        let rel = Path::new(&e.mesh_path);
        let plain = rel.components().all(|c| matches!(c, std::path::Component::Normal(_)));
        if !plain {
            if rel.is_relative() {
                let abs = std::fs::canonicalize(base.join(rel)).map_err(|err| Error::io(base.join(rel), err))?;
                e.mesh_path = abs.display().to_string();
            }
            continue;
        }
        if copied.insert(e.mesh_path.clone()) && base.join(rel) != out.join(rel) {
            let bytes = std::fs::read(base.join(rel)).map_err(|err| Error::io(base.join(rel), err))?;
            crate::io::write_bytes(&out.join(rel), &bytes)?;
        }
    }
    Ok(())
}

fn mesh_loader(manifest_path: &Path, cfg: &RunConfig) -> MeshLoader {
    let mut loader = MeshLoader::new(base_dir(manifest_path), cfg.normalization);
    loader.match_options = cfg.augment.match_options();
    loader.texture = cfg.augment.texture;
    loader
}

fn augment_cmd(a: &AugmentArgs, mut cfg: RunConfig) -> Result<i32> {
    let manifest_path = required(a.manifest.as_ref(), cfg.paths.manifest.as_ref(), "manifest")?;
    let out = required(a.out.as_ref(), cfg.paths.out.as_ref(), "out")?;
    let ac = &mut cfg.augment;
    if let Some(m) = a.mode {
        ac.mode = match m {
            ModeArg::Head => SamplingMode::HeadBased,
            ModeArg::Gaze => SamplingMode::GazeBased,
        };
    }
    if let Some(r) = a.radius {
        ac.radius_deg = r;
    }
    if let Some(c) = &a.center {
        ac.center = c.parse::<TargetCenter>()?;
    }
    if let Some(n) = a.targets {
        ac.targets_per_source = n;
    }
    if let Some(n) = a.sources {
        ac.sources_per_subject = n;
    }
    if let Some(n) = a.min_samples {
        ac.min_subject_samples = n;
    }
    match a.background {
        Some(BackgroundArg::Solid) => ac.background = BackgroundMode::Solid,
        Some(BackgroundArg::Pool) => ac.background = BackgroundMode::Pool(a.pool.clone().unwrap_or_default()),
        None => {}
    }
    if let (Some(p), BackgroundMode::Pool(dir)) = (&a.pool, &mut ac.background) {
        *dir = p.clone();
    }
    let (background, label) = match &ac.background {
        BackgroundMode::Solid => (BackgroundSource::SolidColor, "solid".to_string()),
        BackgroundMode::Pool(dir) => {
            if dir.as_os_str().is_empty() {
                return Err(Error::InvalidArgument("pool background needs --pool or [paths] pool".into()));
            }
            let (src, hash) = load_background_pool(dir)?;
            (src, format!("pool:{hash}"))
        }
    };
    let manifest = read_manifest(&manifest_path)?;
    let loader = mesh_loader(&manifest_path, &cfg);
    let report = run_augmentation(&manifest, &loader, &cfg.augment, &cfg.normalization, &background, &label, &out)?;
    log::info!("{} of {} planned images written", report.succeeded, report.planned);
    Ok(if report.failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn sample_targets_cmd(a: &SampleTargetsArgs, cli: &Cli) -> Result<i32> {
    let center = match &a.center {
        Some(s) => parse_direction(s, cli.degrees)?,
        None => Direction::FRONTAL,
    };
    if !(a.radius > 0.0 && a.radius <= 90.0) {
        return Err(Error::InvalidArgument(format!("radius {} deg outside (0, 90]", a.radius)));
    }
    let mut rng = crate::augment::derive_rng(cli.seed, &["sample-targets"]);
    let targets: Vec<Value> = (0..a.count)
        .map(|_| {
            let d = crate::geometry::sample_disk_direction(center, a.radius.to_radians(), &mut rng);
            show_direction(d, cli.degrees)
        })
        .collect();
    print_json(&json!({
        "unit": if cli.degrees { "deg" } else { "rad" },
        "center": show_direction(center, cli.degrees),
        "radius_deg": a.radius,
        "targets": targets,
    }))?;
    Ok(EXIT_OK)
}

fn redirect_cmd(a: &RedirectArgs, cli: &Cli, cfg: &RunConfig) -> Result<i32> {
    let target = parse_direction(&a.target, cli.degrees)?;
    let pattern: RedirectPattern = a.pattern.into();
    if let Some(latents) = &a.latents {
        let states = read_latents(latents)?;
        let (head, gaze) = match pattern {
            RedirectPattern::GazeOnly => (None, Some(target)),
            RedirectPattern::Both | RedirectPattern::HeadOnly => (Some(target), None),
        };
        let out: Vec<_> = states
            .iter()
            .map(|s| redirect(s, pattern, head, gaze))
            .collect::<Result<_>>()?;
        write_latents(&a.out, &out)?;
        print_json(&json!({"latents": out.len(), "pattern": pattern.name()}))?;
        return Ok(EXIT_OK);
    }
    let manifest_path = required(a.manifest.as_ref(), cfg.paths.manifest.as_ref(), "manifest")?;
    let manifest = read_manifest(&manifest_path)?;
    let entry = manifest
        .get(a.row)
        .ok_or_else(|| Error::InvalidArgument(format!("row {} outside manifest of {} rows", a.row, manifest.len())))?;
    let frames = ManifestFrames {
        base_dir: base_dir(&manifest_path),
    };
    let source = crate::evalharness::FrameSource::frame(&frames, entry)?;
    let labels = entry.labels();
    let redirector = MeshRedirector {
        meshes: mesh_loader(&manifest_path, cfg),
        spec: cfg.normalization,
    };
    let result = redirector.redirect(&RedirectRequest {
        entry,
        source: &source,
        pattern: Some(pattern),
        source_labels: labels,
        target: pattern_target(labels, target, pattern),
    })?;
    write_png(&a.out, &result.image)?;
    let got = result.sidecar.unwrap_or(labels);
    print_json(&json!({
        "unit": if cli.degrees { "deg" } else { "rad" },
        "pattern": pattern.name(),
        "head": show_direction(got.head, cli.degrees),
        "gaze": show_direction(got.gaze, cli.degrees),
    }))?;
    Ok(EXIT_OK)
}

fn apply_protocol(p: &ProtocolArgs, cfg: &mut RunConfig) {
    let pc = &mut cfg.protocol;
    if let Some(n) = p.targets {
        pc.targets_per_source = n;
    }
    if let Some(n) = p.sources {
        pc.sources_per_subject = n;
    }
    if let Some(w) = p.bin_width {
        pc.bin_width_deg = w;
    }
    if let Some(a) = p.alpha {
        pc.alpha = a;
    }
}

fn build_redirector(which: RedirectorArg, manifest_path: &Path, cfg: &RunConfig) -> Box<dyn Redirector> {
    match which {
        RedirectorArg::Mesh => Box::new(MeshRedirector {
            meshes: mesh_loader(manifest_path, cfg),
            spec: cfg.normalization,
        }),
        RedirectorArg::Identity => Box::new(IdentityRedirector),
        RedirectorArg::Latent => Box::new(LatentRedirector {
            encoder: OracleEncoder { rows: cfg.embedding_rows },
            decoder: OracleDecoder,
        }),
    }
}

fn build_estimator(i: &InterfaceArgs) -> Result<Box<dyn Estimator>> {
    match i.estimator {
        EstimatorArg::Oracle => Ok(Box::new(OracleEstimator)),
        EstimatorArg::Command => {
            let cmd = i
                .estimator_cmd
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("--estimator command needs --estimator-cmd".into()))?;
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts
                .next()
                .ok_or_else(|| Error::InvalidArgument("--estimator-cmd is empty".into()))?;
            Ok(Box::new(CommandEstimator::new(program, parts.collect())))
        }
    }
}

fn finish_run(run: &EvalRun, out: &Path, bin_width: f64) -> Result<i32> {
    let bundle = report(run, bin_width)?;
    write_report(out, run, &bundle)?;
    log::info!(
        "{} records, {} failures; mean head error {:.6} deg, mean gaze error {:.6} deg",
        run.records.len(),
        run.failures.len(),
        bundle.summary.mean_head_error_deg,
        bundle.summary.mean_gaze_error_deg
    );
    Ok(if run.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn eval_angle_cmd(a: &EvalAngleArgs, mut cfg: RunConfig) -> Result<i32> {
    let p = &a.protocol;
    let manifest_path = required(p.manifest.as_ref(), cfg.paths.manifest.as_ref(), "manifest")?;
    let out = required(p.out.as_ref(), cfg.paths.out.as_ref(), "out")?;
    apply_protocol(p, &mut cfg);
    if let Some(pat) = a.pattern {
        cfg.protocol.pattern = pat.into();
    }
    if let Some(r) = a.radius {
        cfg.protocol.radius_deg = r;
    }
    if let Some(c) = &a.center {
        cfg.protocol.center = c.parse()?;
    }
    let manifest = read_manifest(&manifest_path)?;
    let frames = ManifestFrames {
        base_dir: base_dir(&manifest_path),
    };
    let redirector = build_redirector(p.interfaces.redirector, &manifest_path, &cfg);
    let estimator = build_estimator(&p.interfaces)?;
    let run = redirect_to_angle(&manifest, &frames, redirector.as_ref(), estimator.as_ref(), &cfg.protocol)?;
    finish_run(&run, &out, cfg.protocol.bin_width_deg)
}

fn eval_image_cmd(a: &EvalImageArgs, mut cfg: RunConfig) -> Result<i32> {
    let p = &a.protocol;
    let manifest_path = required(p.manifest.as_ref(), cfg.paths.manifest.as_ref(), "manifest")?;
    let out = required(p.out.as_ref(), cfg.paths.out.as_ref(), "out")?;
    apply_protocol(p, &mut cfg);
    let manifest = read_manifest(&manifest_path)?;
    let pairs = make_image_pairs(&manifest, &cfg.protocol)?;
    let mut pairs_csv = String::from("pair,source_row,target_row\n");
    for (i, (s, t)) in pairs.iter().enumerate() {
        pairs_csv.push_str(&format!("{i},{s},{t}\n"));
    }
    crate::io::write_bytes(&out.join("pairs.csv"), pairs_csv.as_bytes())?;

    let features = match (&a.features_generated, &a.features_target) {
        (Some(g), Some(t)) => Some(PairFeatures {
            generated: read_feature_set(g)?,
            target: read_feature_set(t)?,
        }),
        _ => {
            log::warn!("no feature files given; identity similarity and FID are skipped");
            None
        }
    };
    let frames = ManifestFrames {
        base_dir: base_dir(&manifest_path),
    };
    let redirector = build_redirector(p.interfaces.redirector, &manifest_path, &cfg);
    let estimator = build_estimator(&p.interfaces)?;
    let image_dir = out.join("images");
    let save = |i: usize, f: &Frame| write_png(&image_dir.join(format!("{i:07}.png")), &f.image);
    let sink: Option<&(dyn Fn(usize, &Frame) -> Result<()> + Sync)> = if a.save_images { Some(&save) } else { None };
    let run = redirect_to_image(
        &manifest,
        &pairs,
        &frames,
        redirector.as_ref(),
        estimator.as_ref(),
        features.as_ref(),
        &cfg.protocol,
        sink,
    )?;
    finish_run(&run, &out, cfg.protocol.bin_width_deg)
}

fn metric_output(metric: &str, value: f64, n: usize, params: Value) -> Result<i32> {
    print_json(&json!({"metric": metric, "value": value, "n": n, "params": params}))?;
    Ok(EXIT_OK)
}

fn metric_cmd(m: &MetricCommand, cli: &Cli, cfg: &RunConfig) -> Result<i32> {
    match m {
        MetricCommand::Fid { a, b } => {
            let fa = read_feature_set(a)?;
            let fb = read_feature_set(b)?;
            let v = fid(&fa, &fb)?;
            metric_output("fid", v, fa.len(), json!({"rows_b": fb.len(), "dim": fa.dim()}))
        }
        MetricCommand::Msssim { a, b, scales } => {
            let x = read_png(a)?;
            let y = read_png(b)?;
            let cfg = MsSsimConfig {
                scales: *scales,
                ..MsSsimConfig::default()
            };
            let v = ms_ssim_with(&x, &y, &cfg)?;
            metric_output("msssim", v, 1, json!({"scales": scales}))
        }
        MetricCommand::Angular { a, b } => {
            let da = parse_direction(a, cli.degrees)?;
            let db = parse_direction(b, cli.degrees)?;
            let rad = angular_error(&direction_to_vector(da), &direction_to_vector(db));
            let v = if cli.degrees { rad.to_degrees() } else { rad };
            metric_output("angular", v, 1, json!({"unit": if cli.degrees { "deg" } else { "rad" }}))
        }
        MetricCommand::MixedLoss { a, b, alpha } => {
            let alpha = alpha.unwrap_or(cfg.losses.alpha);
            let v = mixed_rec_loss(&read_png(a)?, &read_png(b)?, alpha)?;
            metric_output("mixed-loss", v, 1, json!({"alpha": alpha}))
        }
        MetricCommand::TotalLoss {
            sted,
            id,
            rec,
            lambda_id,
            lambda_rec,
        } => {
            let w = LossWeights {
                alpha: cfg.losses.alpha,
                lambda_id: lambda_id.unwrap_or(cfg.losses.lambda_id),
                lambda_rec: lambda_rec.unwrap_or(cfg.losses.lambda_rec),
            };
            let v = total_loss(*sted, *id, *rec, &w)?;
            metric_output("total-loss", v, 1, json!({"lambda_id": w.lambda_id, "lambda_rec": w.lambda_rec}))
        }
    }
}

fn report_diff_cmd(a: &ReportDiffArgs) -> Result<i32> {
    let baseline = read_report(&a.baseline)?;
    let treatment = read_report(&a.treatment)?;
    let diff = report_diff(&baseline, &treatment);
    if let Some(out) = &a.out {
        write_json(&out.join("diff.json"), &diff)?;
        crate::io::write_bytes(&out.join("diff.csv"), diff_csv(&diff).as_bytes())?;
    }
    print_json(&serde_json::to_value(&diff).expect("diff serializes"))?;
    Ok(EXIT_OK)
}

/// Entry point used by the binary.
pub fn main() -> i32 {
    run_with_args(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run_with_args(["gazeaug", "augment", "--bogus"]), EXIT_USAGE);
        assert_eq!(run_with_args(["gazeaug"]), EXIT_USAGE);
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = Cli::command();
        let mut help = Vec::new();
        for name in ["augment", "eval-angle"] {
            cmd.find_subcommand_mut(name).unwrap().write_long_help(&mut help).unwrap();
        }
        let text = String::from_utf8(help).unwrap();
        for d in ["[default: 60]", "[default: 10]", "[default: 30]", "[default: 20]", "[default: 0.84]"] {
            assert!(text.contains(d), "missing {d}");
        }
        let mut help = Vec::new();
        cmd.find_subcommand_mut("metric")
            .unwrap()
            .find_subcommand_mut("total-loss")
            .unwrap()
            .write_long_help(&mut help)
            .unwrap();
        let text = String::from_utf8(help).unwrap();
        assert!(text.contains("[default: 2]") && text.contains("[default: 200]"));
    }

    #[test]
    fn direction_parsing() {
        let d = parse_direction("10,-20", true).unwrap();
        assert!((d.pitch - 10f64.to_radians()).abs() < 1e-15);
        assert!(parse_direction("2,0", false).is_err());
        assert!(parse_direction("1", false).is_err());
    }
}
