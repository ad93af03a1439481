//! Redirect-to-angle and redirect-to-image evaluation, and the report bundle
//! (`summary.json`, `records.csv`, `bins.csv`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{derive_rng, select_per_subject, FailureRecord, ManifestEntry, TargetCenter};
use crate::error::{Error, Result};
use crate::geometry::{angular_error, direction_to_vector, rotation_between, sample_disk_direction, Direction};
use crate::io::format_f64;
use crate::io::image::read_png;
use crate::metrics::{fid, identity_similarity, l1, mixed_rec_loss, ms_ssim, redirection_error, FeatureSet};
use crate::redirect::{Estimator, Frame, Labels, RedirectPattern, RedirectRequest, Redirector};

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub targets_per_source: usize,
    /// Degrees.
    pub radius_deg: f64,
    pub sources_per_subject: usize,
    pub pattern: RedirectPattern,
    pub seed: u64,
    pub center: TargetCenter,
    /// Degrees.
    pub bin_width_deg: f64,
    /// Weight of the MS-SSIM term in the mixed reconstruction metric.
    pub alpha: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            targets_per_source: 10,
            radius_deg: 60.0,
            sources_per_subject: 20,
            pattern: RedirectPattern::Both,
            seed: 0,
            center: TargetCenter::Frontal,
            bin_width_deg: 10.0,
            alpha: 0.84,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.targets_per_source == 0 || self.sources_per_subject == 0 {
            return Err(Error::InvalidArgument("protocol counts must be at least 1".into()));
        }
        if !(self.radius_deg > 0.0 && self.radius_deg <= 90.0) {
            return Err(Error::InvalidArgument(format!("radius {} deg outside (0, 90]", self.radius_deg)));
        }
        if !(self.bin_width_deg > 0.0) {
            return Err(Error::InvalidArgument("bin width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Loads the frame of a manifest row.
pub trait FrameSource: Sync {
    fn frame(&self, entry: &ManifestEntry) -> Result<Frame>;
}

/// PNG images relative to `base_dir`, with the manifest labels as sidecar.
#[derive(Debug, Clone)]
pub struct ManifestFrames {
    pub base_dir: PathBuf,
}

impl FrameSource for ManifestFrames {
    fn frame(&self, entry: &ManifestEntry) -> Result<Frame> {
        let image = read_png(&self.base_dir.join(&entry.image_path))?;
        Ok(Frame::labeled(image, entry.labels()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub subject: String,
    pub row: usize,
    /// Manifest row of the target image (redirect-to-image only).
    pub target_row: Option<usize>,
    pub target_index: usize,
    pub source: Labels,
    pub target: Labels,
    pub estimated: Labels,
    pub head_error_deg: f64,
    pub gaze_error_deg: f64,
    /// Angle of the driving target from frontal, degrees; used for binning.
    pub target_angle_deg: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalRun {
    pub planned: usize,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<FailureRecord>,
    pub pattern: Option<RedirectPattern>,
    pub fid: Option<f64>,
}

fn from_frontal_deg(d: Direction) -> f64 {
    angular_error(&direction_to_vector(d), &direction_to_vector(Direction::FRONTAL)).to_degrees()
}

/// Target labels for a sampled direction under `pattern`: `Both` and
/// `HeadOnly` treat it as a head target (with the gaze carried along or kept),
/// `GazeOnly` as a gaze target.
pub fn pattern_target(source: Labels, sampled: Direction, pattern: RedirectPattern) -> Labels {
    match pattern {
        RedirectPattern::Both => {
            let r = rotation_between(source.head, sampled);
            Labels {
                head: sampled,
                gaze: r.rotate(&direction_to_vector(source.gaze)).to_direction(),
            }
        }
        RedirectPattern::HeadOnly => Labels {
            head: sampled,
            gaze: source.gaze,
        },
        RedirectPattern::GazeOnly => Labels {
            head: source.head,
            gaze: sampled,
        },
    }
}

fn driving(labels: Labels, pattern: RedirectPattern) -> Direction {
    match pattern {
        RedirectPattern::GazeOnly => labels.gaze,
        RedirectPattern::Both | RedirectPattern::HeadOnly => labels.head,
    }
}

/// The target the protocol samples for `(entry, index)`; exposed so baselines
/// can be recomputed independently.
pub fn sampled_target(entry: &ManifestEntry, index: usize, cfg: &ProtocolConfig) -> Direction {
    let mut rng = derive_rng(cfg.seed, &["eval-target", &entry.subject_id, &entry.image_path, &index.to_string()]);
    let center = cfg.center.resolve(driving(entry.labels(), cfg.pattern));
    sample_disk_direction(center, cfg.radius_deg.to_radians(), &mut rng)
}

pub fn select_eval_sources(manifest: &[ManifestEntry], cfg: &ProtocolConfig) -> Result<Vec<usize>> {
    let selected = select_per_subject(manifest, cfg.sources_per_subject, 1, cfg.seed, "eval-source")?;
    let mut rows: Vec<usize> = selected.into_values().flatten().collect();
    rows.sort_unstable();
    Ok(rows)
}

fn fail(row: usize, target: Option<usize>, e: &Error) -> FailureRecord {
    FailureRecord {
        row,
        target,
        reason: e.to_string(),
    }
}

type Outcome = std::result::Result<EvalRecord, FailureRecord>;

fn angle_unit(
    row: usize,
    entry: &ManifestEntry,
    source: &Frame,
    t: usize,
    redirector: &dyn Redirector,
    estimator: &dyn Estimator,
    cfg: &ProtocolConfig,
) -> Result<EvalRecord> {
    let sampled = sampled_target(entry, t, cfg).validate()?;
    let source_labels = entry.labels();
    let target = pattern_target(source_labels, sampled, cfg.pattern);
    let out = redirector.redirect(&RedirectRequest {
        entry,
        source,
        pattern: Some(cfg.pattern),
        source_labels,
        target,
    })?;
    let estimated = estimator.estimate(&out)?;
    Ok(EvalRecord {
        subject: entry.subject_id.clone(),
        row,
        target_row: None,
        target_index: t,
        source: source_labels,
        target,
        estimated,
        head_error_deg: redirection_error(target.head, estimated.head),
        gaze_error_deg: redirection_error(target.gaze, estimated.gaze),
        target_angle_deg: from_frontal_deg(sampled),
        metrics: BTreeMap::new(),
    })
}

/// Redirects each selected source to `targets_per_source` sampled directions
/// and scores the estimator's reading of the result against the targets.
pub fn redirect_to_angle(
    manifest: &[ManifestEntry],
    frames: &dyn FrameSource,
    redirector: &dyn Redirector,
    estimator: &dyn Estimator,
    cfg: &ProtocolConfig,
) -> Result<EvalRun> {
    cfg.validate()?;
    let rows = select_eval_sources(manifest, cfg)?;
    let outcomes: Vec<Vec<Outcome>> = rows
        .par_iter()
        .map(|&row| {
            let entry = &manifest[row];
            let source = match frames.frame(entry) {
                Ok(f) => f,
                Err(e) => return (0..cfg.targets_per_source).map(|t| Err(fail(row, Some(t), &e))).collect(),
            };
            (0..cfg.targets_per_source)
                .map(|t| angle_unit(row, entry, &source, t, redirector, estimator, cfg).map_err(|e| fail(row, Some(t), &e)))
                .collect()
        })
        .collect();
    Ok(collect_run(rows.len() * cfg.targets_per_source, outcomes, Some(cfg.pattern)))
}

fn collect_run(planned: usize, outcomes: Vec<Vec<Outcome>>, pattern: Option<RedirectPattern>) -> EvalRun {
    let mut run = EvalRun {
        planned,
        pattern,
        ..EvalRun::default()
    };
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(r) => run.records.push(r),
            Err(f) => {
                log::warn!("row {} target {:?}: {}", f.row, f.target, f.reason);
                run.failures.push(f);
            }
        }
    }
    run
}

/// Pairs each selected source with `targets_per_source` other rows of the
/// same subject (the source itself when the subject has a single row).
pub fn make_image_pairs(manifest: &[ManifestEntry], cfg: &ProtocolConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.iter().enumerate() {
        by_subject.entry(&e.subject_id).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for row in select_eval_sources(manifest, cfg)? {
        let entry = &manifest[row];
        let others: Vec<usize> = by_subject[entry.subject_id.as_str()]
            .iter()
            .copied()
            .filter(|&r| r != row)
            .collect();
        for t in 0..cfg.targets_per_source {
            let target = if others.is_empty() {
                row
            } else {
                let mut rng = derive_rng(cfg.seed, &["eval-pair", &entry.subject_id, &entry.image_path, &t.to_string()]);
                others[rand::Rng::random_range(&mut rng, 0..others.len())]
            };
            pairs.push((row, target));
        }
    }
    Ok(pairs)
}

/// Feature rows aligned with the pair list: one for each redirected output
/// and one for each target image.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub generated: FeatureSet,
    pub target: FeatureSet,
}

fn image_unit(
    pair: usize,
    (row, target_row): (usize, usize),
    manifest: &[ManifestEntry],
    frames: &dyn FrameSource,
    redirector: &dyn Redirector,
    estimator: &dyn Estimator,
    features: Option<&PairFeatures>,
    cfg: &ProtocolConfig,
) -> Result<(EvalRecord, Frame)> {
    let entry = &manifest[row];
    let target_entry = &manifest[target_row];
    let source = frames.frame(entry)?;
    let target_frame = frames.frame(target_entry)?;
    let source_labels = entry.labels();
    let target = target_entry.labels();
    let out = redirector.redirect(&RedirectRequest {
        entry,
        source: &source,
        pattern: None,
        source_labels,
        target,
    })?;
    let estimated = estimator.estimate(&out)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("ms_ssim".to_string(), ms_ssim(&out.image, &target_frame.image)?);
    metrics.insert("l1".to_string(), l1(&out.image, &target_frame.image)?);
    metrics.insert("mixed_rec".to_string(), mixed_rec_loss(&out.image, &target_frame.image, cfg.alpha)?);
    if let Some(f) = features {
        metrics.insert(
            "identity_similarity".to_string(),
            identity_similarity(&f.generated.rows()[pair], &f.target.rows()[pair])?,
        );
    }
    let record = EvalRecord {
        subject: entry.subject_id.clone(),
        row,
        target_row: Some(target_row),
        target_index: pair,
        source: source_labels,
        target,
        estimated,
        head_error_deg: redirection_error(target.head, estimated.head),
        gaze_error_deg: redirection_error(target.gaze, estimated.gaze),
        target_angle_deg: from_frontal_deg(target.head),
        metrics,
    };
    Ok((record, out))
}

/// Redirects each source toward its paired target image's labels and scores
/// labels, image agreement, and (given features) identity similarity and FID.
///
/// `sink`, when given, receives every redirected frame with its pair index,
/// e.g. to save images for an external feature extractor.
pub fn redirect_to_image(
    manifest: &[ManifestEntry],
    pairs: &[(usize, usize)],
    frames: &dyn FrameSource,
    redirector: &dyn Redirector,
    estimator: &dyn Estimator,
    features: Option<&PairFeatures>,
    cfg: &ProtocolConfig,
    sink: Option<&(dyn Fn(usize, &Frame) -> Result<()> + Sync)>,
) -> Result<EvalRun> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyRun);
    }
    for &(a, b) in pairs {
        if a >= manifest.len() || b >= manifest.len() {
            return Err(Error::InvalidArgument(format!("pair ({a}, {b}) outside manifest of {} rows", manifest.len())));
        }
        if manifest[a].subject_id != manifest[b].subject_id {
            return Err(Error::InvalidArgument(format!("pair ({a}, {b}) mixes subjects")));
        }
    }
    if let Some(f) = features {
        for (name, set) in [("generated", &f.generated), ("target", &f.target)] {
            if set.len() != pairs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{name} features have {} rows for {} pairs",
                    set.len(),
                    pairs.len()
                )));
            }
        }
    }
    let outcomes: Vec<Vec<Outcome>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &pair)| {
            let result = image_unit(i, pair, manifest, frames, redirector, estimator, features, cfg).and_then(|(rec, frame)| {
                if let Some(s) = sink {
                    s(i, &frame)?;
                }
                Ok(rec)
            });
            vec![result.map_err(|e| fail(pair.0, Some(i), &e))]
        })
        .collect();
    let mut run = collect_run(pairs.len(), outcomes, None);
    if let Some(f) = features {
        run.fid = Some(fid(&f.generated, &f.target)?);
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub planned: usize,
    pub records: usize,
    pub failures: usize,
    pub pattern: Option<String>,
    pub mean_head_error_deg: f64,
    pub mean_gaze_error_deg: f64,
    pub metrics: BTreeMap<String, f64>,
    pub fid: Option<f64>,
    pub bin_width_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub bin_start_deg: f64,
    pub count: usize,
    pub mean_head_err: f64,
    pub mean_gaze_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub summary: Summary,
    pub bins: Vec<Bin>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Aggregates a run. Bins are `[k·w, (k+1)·w)` over the target angle; only
/// populated bins are listed.
pub fn report(run: &EvalRun, bin_width_deg: f64) -> Result<ReportBundle> {
    if run.records.is_empty() {
        return Err(Error::EmptyRun);
    }
    if !(bin_width_deg > 0.0) {
        return Err(Error::InvalidArgument("bin width must be positive".into()));
    }
    let records = &run.records;
    let names: Vec<&String> = records[0].metrics.keys().collect();
    for r in records {
        if r.metrics.keys().collect::<Vec<_>>() != names {
            return Err(Error::DimensionMismatch("records carry different metric sets".into()));
        }
    }
    let metrics = names
        .iter()
        .map(|&name| ((*name).clone(), mean(records.iter().map(|r| r.metrics[name]))))
        .collect();
    let mut binned: BTreeMap<u64, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        binned.entry((r.target_angle_deg / bin_width_deg).floor() as u64).or_default().push(r);
    }
    let bins = binned
        .into_iter()
        .map(|(k, rs)| Bin {
            bin_start_deg: k as f64 * bin_width_deg,
            count: rs.len(),
            mean_head_err: mean(rs.iter().map(|r| r.head_error_deg)),
            mean_gaze_err: mean(rs.iter().map(|r| r.gaze_error_deg)),
        })
        .collect();
    Ok(ReportBundle {
        summary: Summary {
            planned: run.planned,
            records: records.len(),
            failures: run.failures.len(),
            pattern: run.pattern.map(|p| p.name().to_string()),
            mean_head_error_deg: mean(records.iter().map(|r| r.head_error_deg)),
            mean_gaze_error_deg: mean(records.iter().map(|r| r.gaze_error_deg)),
            metrics,
            fid: run.fid,
            bin_width_deg,
        },
        bins,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Column order of `records.csv`. Angles are radians except the `_deg` columns.
pub const RECORD_COLUMNS: [&str; 18] = [
    "subject",
    "row",
    "target_row",
    "target_index",
    "source_head_pitch",
    "source_head_yaw",
    "source_gaze_pitch",
    "source_gaze_yaw",
    "target_head_pitch",
    "target_head_yaw",
    "target_gaze_pitch",
    "target_gaze_yaw",
    "estimated_head_pitch",
    "estimated_head_yaw",
    "estimated_gaze_pitch",
    "estimated_gaze_yaw",
    "head_error_deg",
    "gaze_error_deg",
];

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = String::new();
    let metric_names: Vec<&String> = records.first().map(|r| r.metrics.keys().collect()).unwrap_or_default();
    out.push_str(&RECORD_COLUMNS.join(","));
    out.push_str(",target_angle_deg");
    for m in &metric_names {
        out.push(',');
        out.push_str(m);
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{}",
            csv_field(&r.subject),
            r.row,
            r.target_row.map(|t| t.to_string()).unwrap_or_default(),
            r.target_index
        );
        for labels in [r.source, r.target, r.estimated] {
            for d in [labels.head, labels.gaze] {
                let _ = write!(out, ",{},{}", format_f64(d.pitch), format_f64(d.yaw));
            }
        }
        let _ = write!(
            out,
            ",{},{},{}",
            format_f64(r.head_error_deg),
            format_f64(r.gaze_error_deg),
            format_f64(r.target_angle_deg)
        );
        for m in &metric_names {
            let _ = write!(out, ",{}", format_f64(r.metrics[*m]));
        }
        out.push('\n');
    }
    out
}

pub fn bins_csv(bins: &[Bin]) -> String {
    let mut out = String::from("bin_start_deg,count,mean_head_err,mean_gaze_err\n");
    for b in bins {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_f64(b.bin_start_deg),
            b.count,
            format_f64(b.mean_head_err),
            format_f64(b.mean_gaze_err)
        );
    }
    out
}

fn json_text<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `summary.json`, `records.csv`, `bins.csv` and `failures.json`.
pub fn write_report(dir: &Path, run: &EvalRun, bundle: &ReportBundle) -> Result<()> {
    crate::io::write_bytes(&dir.join("summary.json"), json_text(&bundle.summary).as_bytes())?;
    crate::io::write_bytes(&dir.join("records.csv"), records_csv(&run.records).as_bytes())?;
    crate::io::write_bytes(&dir.join("bins.csv"), bins_csv(&bundle.bins).as_bytes())?;
    crate::io::write_bytes(&dir.join("failures.json"), json_text(&run.failures).as_bytes())
}

fn parse_bins(text: &str, name: &str) -> Result<Vec<Bin>> {
    use crate::error::Position;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "bin_start_deg,count,mean_head_err,mean_gaze_err")) => {}
        _ => return Err(Error::parse(name, Position::Line(1), "unexpected bins header")),
    }
    let mut bins = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::parse(name, Position::Line(i + 1), msg.to_string());
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("invalid number"));
        bins.push(Bin {
            bin_start_deg: num(f[0])?,
            count: f[1].parse().map_err(|_| bad("invalid count"))?,
            mean_head_err: num(f[2])?,
            mean_gaze_err: num(f[3])?,
        });
    }
    Ok(bins)
}

pub fn read_report(dir: &Path) -> Result<ReportBundle> {
    let summary_path = dir.join("summary.json");
    let text = crate::io::read_to_string(&summary_path)?;
    let summary: Summary = serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            summary_path.display().to_string(),
            crate::error::Position::Line(e.line()),
            e.to_string(),
        )
    })?;
    let bins_path = dir.join("bins.csv");
    let bins = parse_bins(&crate::io::read_to_string(&bins_path)?, &bins_path.display().to_string())?;
    Ok(ReportBundle { summary, bins })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinDiff {
    pub bin_start_deg: f64,
    pub baseline_count: usize,
    pub treatment_count: usize,
    pub head_err_change: f64,
    pub gaze_err_change: f64,
}

/// Treatment minus baseline; negative values mean the error went down.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDiff {
    pub head_error_change_deg: f64,
    pub gaze_error_change_deg: f64,
    pub metrics: BTreeMap<String, f64>,
    pub bins: Vec<BinDiff>,
}

/// Differences two reports. Metrics and bins present in only one report are
/// left out.
pub fn report_diff(baseline: &ReportBundle, treatment: &ReportBundle) -> ReportDiff {
    let metrics = treatment
        .summary
        .metrics
        .iter()
        .filter_map(|(k, t)| baseline.summary.metrics.get(k).map(|b| (k.clone(), t - b)))
        .collect();
    let bins = treatment
        .bins
        .iter()
        .filter_map(|t| {
            baseline.bins.iter().find(|b| b.bin_start_deg == t.bin_start_deg).map(|b| BinDiff {
                bin_start_deg: t.bin_start_deg,
                baseline_count: b.count,
                treatment_count: t.count,
                head_err_change: t.mean_head_err - b.mean_head_err,
                gaze_err_change: t.mean_gaze_err - b.mean_gaze_err,
            })
        })
        .collect();
    ReportDiff {
        head_error_change_deg: treatment.summary.mean_head_error_deg - baseline.summary.mean_head_error_deg,
        gaze_error_change_deg: treatment.summary.mean_gaze_error_deg - baseline.summary.mean_gaze_error_deg,
        metrics,
        bins,
    }
}

pub fn diff_csv(diff: &ReportDiff) -> String {
    let mut out = String::from("bin_start_deg,baseline_count,treatment_count,head_err_change,gaze_err_change\n");
    for b in &diff.bins {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            format_f64(b.bin_start_deg),
            b.baseline_count,
            b.treatment_count,
            format_f64(b.head_err_change),
            format_f64(b.gaze_err_change)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ImageBuffer;
    use crate::redirect::{IdentityRedirector, OracleEstimator};

    struct Solid;

    impl FrameSource for Solid {
        fn frame(&self, entry: &ManifestEntry) -> Result<Frame> {
            Ok(Frame::labeled(ImageBuffer::filled(16, 16, [0.5, 0.25, 0.75]), entry.labels()))
        }
    }

    fn manifest(subjects: usize, per: usize) -> Vec<ManifestEntry> {
        let mut out = Vec::new();
        for s in 0..subjects {
            for i in 0..per {
                out.push(ManifestEntry {
                    subject_id: format!("s{s}"),
                    image_path: format!("s{s}/{i}.png"),
                    mesh_path: "m.mesh".into(),
                    head: Direction::new(0.02 * i as f64, -0.03 * s as f64),
                    gaze: Direction::new(-0.01 * i as f64, 0.05),
                    camera_id: "c".into(),
                });
            }
        }
        out
    }

    fn cfg(pattern: RedirectPattern) -> ProtocolConfig {
        ProtocolConfig {
            targets_per_source: 4,
            sources_per_subject: 3,
            pattern,
            seed: 11,
            ..ProtocolConfig::default()
        }
    }

    #[test]
    fn identity_baseline_error_is_target_distance() {
        let m = manifest(2, 5);
        let c = cfg(RedirectPattern::Both);
        let run = redirect_to_angle(&m, &Solid, &IdentityRedirector, &OracleEstimator, &c).unwrap();
        assert_eq!(run.records.len(), 2 * 3 * 4);
        let mut expected = 0.0;
        for r in &run.records {
            let d = sampled_target(&m[r.row], r.target_index, &c);
            expected += angular_error(&direction_to_vector(d), &direction_to_vector(m[r.row].head)).to_degrees();
        }
        expected /= run.records.len() as f64;
        let rep = report(&run, 10.0).unwrap();
        assert!((rep.summary.mean_head_error_deg - expected).abs() < 1e-9);
        assert_eq!(rep.bins.iter().map(|b| b.count).sum::<usize>(), run.records.len());
    }

    #[test]
    fn runs_are_deterministic() {
        let m = manifest(3, 4);
        let c = cfg(RedirectPattern::GazeOnly);
        let a = redirect_to_angle(&m, &Solid, &IdentityRedirector, &OracleEstimator, &c).unwrap();
        let b = redirect_to_angle(&m, &Solid, &IdentityRedirector, &OracleEstimator, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(records_csv(&a.records), records_csv(&b.records));
    }

    #[test]
    fn pattern_targets() {
        let src = Labels {
            head: Direction::new(0.1, 0.2),
            gaze: Direction::new(-0.1, 0.3),
        };
        let d = Direction::new(0.4, -0.5);
        assert_eq!(pattern_target(src, d, RedirectPattern::HeadOnly).gaze, src.gaze);
        assert_eq!(pattern_target(src, d, RedirectPattern::GazeOnly).head, src.head);
        let both = pattern_target(src, d, RedirectPattern::Both);
        let before = angular_error(&direction_to_vector(src.head), &direction_to_vector(src.gaze));
        let after = angular_error(&direction_to_vector(both.head), &direction_to_vector(both.gaze));
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn image_pairs_stay_within_subject() {
        let m = manifest(2, 4);
        let pairs = make_image_pairs(&m, &cfg(RedirectPattern::Both)).unwrap();
        assert_eq!(pairs.len(), 2 * 3 * 4);
        for (a, b) in pairs {
            assert_eq!(m[a].subject_id, m[b].subject_id);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn redirect_to_image_without_features() {
        let m = manifest(1, 3);
        let pairs = vec![(0, 0), (1, 1)];
        let run = redirect_to_image(&m, &pairs, &Solid, &IdentityRedirector, &OracleEstimator, None, &cfg(RedirectPattern::Both), None).unwrap();
        assert_eq!(run.records.len(), 2);
        for r in &run.records {
            assert_eq!(r.head_error_deg, 0.0);
            assert!((r.metrics["ms_ssim"] - 1.0).abs() < 1e-12);
            assert!(!r.metrics.contains_key("identity_similarity"));
        }
        assert_eq!(run.fid, None);
    }

    #[test]
    fn redirect_to_image_fid_delegates() {
        let m = manifest(1, 3);
        let pairs = vec![(0, 1), (1, 2), (2, 0)];
        let gen = FeatureSet::new(2, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let tgt = FeatureSet::new(2, vec![vec![0.5, 0.0], vec![0.0, 2.0], vec![1.0, 0.5]]).unwrap();
        let f = PairFeatures {
            generated: gen.clone(),
            target: tgt.clone(),
        };
        let run = redirect_to_image(&m, &pairs, &Solid, &IdentityRedirector, &OracleEstimator, Some(&f), &cfg(RedirectPattern::Both), None).unwrap();
        assert_eq!(run.fid, Some(fid(&gen, &tgt).unwrap()));
        assert!(run.records.iter().all(|r| r.metrics.contains_key("identity_similarity")));
    }

    #[test]
    fn report_round_trip_and_diff() {
        let m = manifest(2, 5);
        let run = redirect_to_angle(&m, &Solid, &IdentityRedirector, &OracleEstimator, &cfg(RedirectPattern::Both)).unwrap();
        let bundle = report(&run, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &run, &bundle).unwrap();
        let back = read_report(dir.path()).unwrap();
        assert_eq!(back, bundle);
        let diff = report_diff(&bundle, &back);
        assert_eq!(diff.head_error_change_deg, 0.0);
        assert!(diff.bins.iter().all(|b| b.head_err_change == 0.0));
    }

    #[test]
    fn empty_run_is_rejected() {
        assert!(matches!(report(&EvalRun::default(), 10.0), Err(Error::EmptyRun)));
    }
}
