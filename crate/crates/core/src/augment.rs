//! Rotation augmentation: subject filtering, source selection, disk-sampled
//! targets, mesh rotation and rendering, and output bookkeeping.
//!
//! Every random draw comes from a stream derived by hashing
//! `(seed, purpose, subject, image, index)`, so results do not depend on how
//! work is scheduled across threads.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::camnorm::{HeadPose, NormalizationSpec};
use crate::error::{Error, Result};
use crate::facemesh::{
    projective_match, rotate_about_center, texture_from_image, LabeledMesh, MatchOptions, SimilarityTransform,
};
use crate::geometry::{angular_error, direction_to_vector, rotation_between, rotation_from_direction, sample_disk_direction, Direction, Rotation3};
use crate::io::image::{read_png, write_png};
use crate::io::manifest::ManifestWriter;
use crate::io::mesh::{read_mesh, MeshFile};
use crate::raster::{random_background, rasterize, BackgroundSource, ImageBuffer};
use crate::redirect::{Frame, Labels, RedirectPattern, RedirectRequest, Redirector};

/// One labeled sample of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub image_path: String,
    pub mesh_path: String,
    pub head: Direction,
    pub gaze: Direction,
    pub camera_id: String,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("subject", &self.subject_id), ("image", &self.image_path), ("mesh", &self.mesh_path)] {
            if v.is_empty() {
                return Err(Error::InvalidArgument(format!("empty {name} field")));
            }
        }
        self.head.validate()?;
        self.gaze.validate()?;
        Ok(())
    }

    pub fn labels(&self) -> Labels {
        Labels {
            head: self.head,
            gaze: self.gaze,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Targets are head directions; the rotation moves the source head onto them.
    #[default]
    HeadBased,
    /// Targets are gaze directions; the rotation moves the source gaze onto them.
    GazeBased,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" | "head-based" => Ok(Self::HeadBased),
            "gaze" | "gaze-based" => Ok(Self::GazeBased),
            other => Err(Error::InvalidArgument(format!("unknown sampling mode '{other}' (head|gaze)"))),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::HeadBased => "head",
            Self::GazeBased => "gaze",
        })
    }
}

/// Center of the target disk.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TargetCenter {
    #[default]
    Frontal,
    /// The source's own head or gaze direction, matching the sampling mode.
    Source,
    Fixed(Direction),
}

impl TargetCenter {
    pub fn resolve(self, source: Direction) -> Direction {
        match self {
            Self::Frontal => Direction::FRONTAL,
            Self::Source => source,
            Self::Fixed(d) => d,
        }
    }
}

/// `frontal`, `source`, or `pitch,yaw` in degrees.
impl std::str::FromStr for TargetCenter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frontal" => Ok(Self::Frontal),
            "source" => Ok(Self::Source),
            other => {
                let parts: Vec<&str> = other.split(',').map(str::trim).collect();
                let parsed: Vec<f64> = parts.iter().filter_map(|p| p.parse().ok()).collect();
                if parts.len() != 2 || parsed.len() != 2 {
                    return Err(Error::InvalidArgument(format!(
                        "target center '{other}' is not frontal, source, or pitch,yaw degrees"
                    )));
                }
                Ok(Self::Fixed(Direction::from_degrees(parsed[0], parsed[1]).validate()?))
            }
        }
    }
}

impl std::fmt::Display for TargetCenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Frontal => f.write_str("frontal"),
            Self::Source => f.write_str("source"),
            Self::Fixed(d) => {
                let (p, y) = d.to_degrees();
                write!(f, "{p},{y}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum BackgroundMode {
    #[default]
    Solid,
    /// Directory of PNG images.
    Pool(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub mode: SamplingMode,
    /// Disk radius in degrees.
    pub radius_deg: f64,
    pub center: TargetCenter,
    pub targets_per_source: usize,
    pub sources_per_subject: usize,
    pub min_subject_samples: usize,
    pub seed: u64,
    pub background: BackgroundMode,
    /// Allowed disagreement between manifest and mesh labels, degrees.
    pub label_tolerance_deg: f64,
    /// Re-color mesh vertices from the source image after placement.
    pub texture: bool,
    /// Also fit rotation during projective matching.
    pub fit_rotation: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::HeadBased,
            radius_deg: 60.0,
            center: TargetCenter::Frontal,
            targets_per_source: 10,
            sources_per_subject: 30,
            min_subject_samples: 30,
            seed: 0,
            background: BackgroundMode::Solid,
            label_tolerance_deg: 0.5,
            texture: true,
            fit_rotation: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_deg > 0.0 && self.radius_deg <= 90.0) {
            return Err(Error::InvalidArgument(format!("radius {} deg outside (0, 90]", self.radius_deg)));
        }
        for (name, v) in [
            ("targets_per_source", self.targets_per_source),
            ("sources_per_subject", self.sources_per_subject),
            ("min_subject_samples", self.min_subject_samples),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(self.label_tolerance_deg > 0.0) {
            return Err(Error::InvalidArgument("label tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        self.radius_deg.to_radians()
    }

    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            fit_rotation: self.fit_rotation,
            ..MatchOptions::default()
        }
    }
}

/// Independent random stream for one unit of work.
///
/// The key is hashed with SHA-256 (each part length-prefixed) and the digest
/// seeds a ChaCha8 generator.
pub fn derive_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Groups manifest rows by subject, drops subjects with fewer than
/// `min_samples` rows, and draws up to `per_subject` rows per survivor without
/// replacement. Row indices come back sorted.
pub fn select_per_subject(
    manifest: &[ManifestEntry],
    per_subject: usize,
    min_samples: usize,
    seed: u64,
    purpose: &str,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.iter().enumerate() {
        by_subject.entry(&e.subject_id).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (subject, rows) in by_subject {
        if rows.len() < min_samples {
            continue;
        }
        let mut rng = derive_rng(seed, &[purpose, subject]);
        let take = per_subject.min(rows.len());
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, rows.len(), take)
            .into_iter()
            .map(|k| rows[k])
            .collect();
        picked.sort_unstable();
        out.insert(subject.to_string(), picked);
    }
    if out.is_empty() {
        return Err(Error::EmptyAfterFilter { min: min_samples });
    }
    Ok(out)
}

pub fn select_sources(manifest: &[ManifestEntry], cfg: &AugmentConfig) -> Result<BTreeMap<String, Vec<usize>>> {
    select_per_subject(manifest, cfg.sources_per_subject, cfg.min_subject_samples, cfg.seed, "select")
}

/// Places a model-space mesh in the normalized camera of `entry`.
///
/// The initial pose rotates the model by `rotation_from_direction(entry.head)`
/// and puts its face center on the optical axis at the normalized distance.
/// When the file carries landmark pixels, scale and translation are then
/// refined by projective matching.
pub fn place_mesh(
    file: &MeshFile,
    entry: &ManifestEntry,
    spec: &NormalizationSpec,
    options: &MatchOptions,
) -> Result<LabeledMesh> {
    let rotation = rotation_from_direction(entry.head);
    let center = file.mesh.face_center();
    let translation = nalgebra::Vector3::new(0.0, 0.0, spec.distance_norm) - rotation.apply(&center);
    let mut transform = SimilarityTransform::new(1.0, rotation, translation)?;
    if !file.landmark_pixels.is_empty() {
        transform = projective_match(
            file.mesh.vertices(),
            &file.landmark_pixels,
            file.mesh.landmark_indices(),
            &spec.intrinsics(),
            &transform,
            options,
        )?
        .transform;
    }
    Ok(LabeledMesh {
        mesh: file.mesh.transformed(&transform),
        head: HeadPose::new(transform.rotation, transform.apply(&center)),
        gaze_vector: direction_to_vector(entry.gaze),
    })
}

/// Supplies camera-space labeled meshes for manifest rows.
pub trait MeshSource: Sync {
    /// `image` is the already loaded source image, if the caller has it.
    fn labeled_mesh(&self, entry: &ManifestEntry, image: Option<&ImageBuffer>) -> Result<LabeledMesh>;
}

/// Reads mesh files (and source images, for texturing) relative to `base_dir`.
#[derive(Debug, Clone)]
pub struct MeshLoader {
    pub base_dir: PathBuf,
    pub spec: NormalizationSpec,
    pub match_options: MatchOptions,
    pub texture: bool,
}

impl MeshLoader {
    pub fn new(base_dir: impl Into<PathBuf>, spec: NormalizationSpec) -> Self {
        Self {
            base_dir: base_dir.into(),
            spec,
            match_options: MatchOptions::default(),
            texture: true,
        }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        self.base_dir.join(path)
    }
}

impl MeshSource for MeshLoader {
    fn labeled_mesh(&self, entry: &ManifestEntry, image: Option<&ImageBuffer>) -> Result<LabeledMesh> {
        let file = read_mesh(&self.resolve(&entry.mesh_path))?;
        let mut placed = place_mesh(&file, entry, &self.spec, &self.match_options)?;
        if self.texture {
            let loaded;
            let image = match image {
                Some(img) => img,
                None => {
                    loaded = read_png(&self.resolve(&entry.image_path))?;
                    &loaded
                }
            };
            if image.width() != self.spec.out_width || image.height() != self.spec.out_height {
                return Err(Error::DimensionMismatch(format!(
                    "source image {} is {}x{}, normalized size is {}x{}",
                    entry.image_path,
                    image.width(),
                    image.height(),
                    self.spec.out_width,
                    self.spec.out_height
                )));
            }
            placed.mesh = texture_from_image(&placed.mesh, image, &self.spec.intrinsics())?;
        }
        Ok(placed)
    }
}

/// Renders a camera-space mesh over `background`. Any triangle touching the
/// camera plane fails the render.
pub fn render_mesh(lm: &LabeledMesh, spec: &NormalizationSpec, background: &ImageBuffer) -> Result<ImageBuffer> {
    let render = rasterize(&lm.mesh, &spec.intrinsics(), background);
    if render.report.skipped_behind_camera > 0 {
        return Err(Error::RenderFailure(format!(
            "{} triangles behind the camera",
            render.report.skipped_behind_camera
        )));
    }
    if render.report.covered_pixels == 0 {
        return Err(Error::RenderFailure("face covers no pixels".into()));
    }
    Ok(render.image)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub target_index: usize,
    /// The sampled target (a head or gaze direction, depending on the mode).
    pub target: Direction,
    pub image: ImageBuffer,
    pub head: Direction,
    pub gaze: Direction,
}

fn check_labels(entry: &ManifestEntry, mesh: &LabeledMesh, tolerance_deg: f64) -> Result<()> {
    let head = angular_error(&direction_to_vector(entry.head), &mesh.head.forward()).to_degrees();
    if !(head <= tolerance_deg) {
        return Err(Error::LabelMismatch {
            factor: "head",
            degrees: head,
        });
    }
    let gaze = angular_error(&direction_to_vector(entry.gaze), &mesh.gaze_vector).to_degrees();
    if !(gaze <= tolerance_deg) {
        return Err(Error::LabelMismatch {
            factor: "gaze",
            degrees: gaze,
        });
    }
    Ok(())
}

fn augment_target(
    entry: &ManifestEntry,
    mesh: &LabeledMesh,
    cfg: &AugmentConfig,
    spec: &NormalizationSpec,
    background: &BackgroundSource,
    index: usize,
) -> Result<AugmentedSample> {
    let mut rng = derive_rng(cfg.seed, &["augment", &entry.subject_id, &entry.image_path, &index.to_string()]);
    let source = match cfg.mode {
        SamplingMode::HeadBased => mesh.head_direction(),
        SamplingMode::GazeBased => mesh.gaze_direction(),
    };
    let target = sample_disk_direction(cfg.center.resolve(source), cfg.radius(), &mut rng);
    if !target.is_valid() {
        return Err(Error::InvalidDirection {
            pitch: target.pitch,
            yaw: target.yaw,
        });
    }
    let rotation = rotation_between(source, target);
    let rotated = rotate_about_center(mesh, &rotation);
    let bg = random_background(&mut rng, background, spec.out_width, spec.out_height)?;
    let image = render_mesh(&rotated, spec, &bg)?;
    Ok(AugmentedSample {
        target_index: index,
        target,
        image,
        head: rotated.head_direction(),
        gaze: rotated.gaze_direction(),
    })
}

/// Produces `targets_per_source` rotated renders of one source. The outer
/// error is a source-level failure; inner errors are per-target failures.
pub fn augment_sample(
    entry: &ManifestEntry,
    mesh: &LabeledMesh,
    cfg: &AugmentConfig,
    spec: &NormalizationSpec,
    background: &BackgroundSource,
) -> Result<Vec<Result<AugmentedSample>>> {
    check_labels(entry, mesh, cfg.label_tolerance_deg)?;
    Ok((0..cfg.targets_per_source)
        .map(|t| augment_target(entry, mesh, cfg, spec, background, t))
        .collect())
}

/// Loads every `.png` in `dir` (sorted by file name) and hashes names and
/// bytes so runs can record which pool they used.
pub fn load_background_pool(dir: &Path) -> Result<(BackgroundSource, String)> {
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for item in read {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut hasher = Sha256::new();
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        images.push(read_png(p)?);
    }
    let hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((BackgroundSource::ImagePool(images), hash))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailureRecord {
    /// Row of the source manifest.
    pub row: usize,
    /// Target index, absent when the whole source failed.
    pub target: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AugmentReport {
    pub planned: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub failures: Vec<FailureRecord>,
    /// `solid` or `pool:<sha256>`.
    pub background: String,
}

/// Keeps subject ids usable as a single path component.
fn path_component(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "_".into()
    } else {
        cleaned
    }
}

pub fn output_image_path(subject: &str, row: usize, target: usize) -> String {
    format!("images/{}/{row:07}_{target:02}.png", path_component(subject))
}

const CHUNK: usize = 32;

/// Runs the whole augmentation and writes `manifest.jsonl`, `report.json` and
/// `images/` under `out_dir`.
///
/// Sources are processed in chunks; the manifest is flushed after each chunk
/// so an aborted run keeps its finished rows. Output rows keep the source's
/// subject, mesh path and camera.
pub fn run_augmentation(
    manifest: &[ManifestEntry],
    meshes: &dyn MeshSource,
    cfg: &AugmentConfig,
    spec: &NormalizationSpec,
    background: &BackgroundSource,
    background_label: &str,
    out_dir: &Path,
) -> Result<AugmentReport> {
    cfg.validate()?;
    spec.validate()?;
    let selected = select_sources(manifest, cfg)?;
    let mut rows: Vec<usize> = selected.values().flatten().copied().collect();
    rows.sort_unstable();
    log::info!(
        "augmenting {} sources from {} subjects, {} targets each",
        rows.len(),
        selected.len(),
        cfg.targets_per_source
    );

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let file = File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut writer = ManifestWriter::new(BufWriter::new(file));

    let mut report = AugmentReport {
        planned: rows.len() * cfg.targets_per_source,
        succeeded: 0,
        failed: 0,
        failures: Vec::new(),
        background: background_label.to_string(),
    };

    for (k, chunk) in rows.chunks(CHUNK).enumerate() {
        let results: Vec<Result<Vec<std::result::Result<ManifestEntry, FailureRecord>>>> = chunk
            .par_iter()
            .map(|&row| process_source(row, &manifest[row], meshes, cfg, spec, background, out_dir))
            .collect();
        for outcome in results {
            for item in outcome? {
                match item {
                    Ok(entry) => {
                        writer.write(&entry).map_err(|e| Error::io(&manifest_path, e))?;
                        report.succeeded += 1;
                    }
                    Err(f) => {
                        log::warn!("row {} target {:?}: {}", f.row, f.target, f.reason);
                        report.failures.push(f);
                    }
                }
            }
        }
        writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
        log::info!("{} / {} sources done", ((k + 1) * CHUNK).min(rows.len()), rows.len());
    }
    report.failed = report.planned - report.succeeded;

    let report_path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    crate::io::write_bytes(&report_path, text.as_bytes())?;
    Ok(report)
}

type SourceOutcome = Vec<std::result::Result<ManifestEntry, FailureRecord>>;

fn process_source(
    row: usize,
    entry: &ManifestEntry,
    meshes: &dyn MeshSource,
    cfg: &AugmentConfig,
    spec: &NormalizationSpec,
    background: &BackgroundSource,
    out_dir: &Path,
) -> Result<SourceOutcome> {
    let fail_all = |reason: String| {
        (0..cfg.targets_per_source)
            .map(|t| {
                Err(FailureRecord {
                    row,
                    target: Some(t),
                    reason: reason.clone(),
                })
            })
            .collect()
    };
    let mesh = match meshes.labeled_mesh(entry, None) {
        Ok(m) => m,
        Err(e) => return Ok(fail_all(e.to_string())),
    };
    let samples = match augment_sample(entry, &mesh, cfg, spec, background) {
        Ok(s) => s,
        Err(e) => return Ok(fail_all(e.to_string())),
    };
    let mut out = Vec::with_capacity(samples.len());
    for (t, sample) in samples.into_iter().enumerate() {
        match sample {
            Ok(s) => {
                let rel = output_image_path(&entry.subject_id, row, t);
                write_png(&out_dir.join(&rel), &s.image)?;
                out.push(Ok(ManifestEntry {
                    subject_id: entry.subject_id.clone(),
                    image_path: rel,
                    mesh_path: entry.mesh_path.clone(),
                    head: s.head,
                    gaze: s.gaze,
                    camera_id: entry.camera_id.clone(),
                }));
            }
            Err(e) => out.push(Err(FailureRecord {
                row,
                target: Some(t),
                reason: e.to_string(),
            })),
        }
    }
    Ok(out)
}

/// Redirects by rotating and re-rendering the source's mesh.
///
/// The head moves by `rotation_between(source head, target head)`; the gaze
/// either follows the head (`Both`), stays put (`HeadOnly`), or is rotated onto
/// the target gaze (`GazeOnly` and pattern-less requests). Eyes are not
/// modeled separately, so gaze-only changes alter labels but not pixels. When
/// the head does not move the source image is returned untouched.
#[derive(Debug, Clone)]
pub struct MeshRedirector<M> {
    pub meshes: M,
    pub spec: NormalizationSpec,
}

impl<M: MeshSource> Redirector for MeshRedirector<M> {
    fn redirect(&self, request: &RedirectRequest<'_>) -> Result<Frame> {
        let lm = self.meshes.labeled_mesh(request.entry, Some(&request.source.image))?;
        let head_rotation = match request.pattern {
            Some(RedirectPattern::GazeOnly) => Rotation3::identity(),
            _ => rotation_between(lm.head_direction(), request.target.head),
        };
        let rotated = rotate_about_center(&lm, &head_rotation);
        let gaze = match request.pattern {
            Some(RedirectPattern::HeadOnly) => lm.gaze_vector,
            Some(RedirectPattern::Both) => rotated.gaze_vector,
            Some(RedirectPattern::GazeOnly) | None => {
                let current = rotated.gaze_direction();
                rotation_between(current, request.target.gaze).rotate(&rotated.gaze_vector)
            }
        };
        let image = if head_rotation == Rotation3::identity() {
            request.source.image.clone()
        } else {
            let bg = request.source.image.resize_bilinear(self.spec.out_width, self.spec.out_height);
            render_mesh(&rotated, &self.spec, &bg)?
        };
        Ok(Frame::labeled(
            image,
            Labels {
                head: rotated.head_direction(),
                gaze: gaze.to_direction(),
            },
        ))
    }
}
