//! Run configuration: `key = value` lines under `[section]` headers.
//!
//! ```text
//! [normalization]   focal_norm, distance_norm, width, height
//! [camera]          <camera id> = fx fy cx cy
//! [augment]         mode, radius, center, targets_per_source, sources_per_subject,
//!                   min_subject_samples, background, label_tolerance, texture, fit_rotation
//! [protocol]        targets_per_source, radius, sources_per_subject, pattern, center, bin_width
//! [losses]          alpha, lambda_id, lambda_rec
//! [redirect]        embedding_rows
//! [paths]           manifest, raw, out, pool
//! ```
//!
//! Angles are degrees. `#` and `;` start comment lines. Unknown sections and
//! keys are errors. Relative paths are resolved against the config file's
//! directory by [`read_config`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::augment::{AugmentConfig, BackgroundMode};
use crate::camnorm::{CameraIntrinsics, NormalizationSpec};
use crate::error::{Error, Position, Result};
use crate::evalharness::ProtocolConfig;
use crate::metrics::LossWeights;
use crate::redirect::DEFAULT_EMBEDDING_ROWS;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub normalization: NormalizationSpec,
    pub cameras: BTreeMap<String, CameraIntrinsics>,
    /// `seed` is not read from the file; it comes from the command line.
    pub augment: AugmentConfig,
    /// `alpha` mirrors `losses.alpha`.
    pub protocol: ProtocolConfig,
    pub losses: LossWeights,
    pub embedding_rows: usize,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            normalization: NormalizationSpec::default(),
            cameras: BTreeMap::new(),
            augment: AugmentConfig::default(),
            protocol: ProtocolConfig::default(),
            losses: LossWeights::default(),
            embedding_rows: DEFAULT_EMBEDDING_ROWS,
            paths: PathsConfig::default(),
        }
    }
}

struct Ctx<'a> {
    name: &'a str,
    line: usize,
}

impl Ctx<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.name, Position::Line(self.line), msg)
    }

    fn f64(&self, v: &str) -> Result<f64> {
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.err(format!("invalid number '{v}'"))),
        }
    }

    fn usize(&self, v: &str) -> Result<usize> {
        v.parse().map_err(|_| self.err(format!("invalid count '{v}'")))
    }

    fn bool(&self, v: &str) -> Result<bool> {
        match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.err(format!("expected true or false, got '{v}'"))),
        }
    }

    fn parsed<T: std::str::FromStr<Err = Error>>(&self, v: &str) -> Result<T> {
        v.parse().map_err(|e: Error| self.err(e.to_string()))
    }
}

const SECTIONS: [&str; 7] = ["normalization", "camera", "augment", "protocol", "losses", "redirect", "paths"];

pub fn parse_config(text: &str, name: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section: Option<&str> = None;
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let ctx = Ctx { name, line: i + 1 };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let s = rest
                .strip_suffix(']')
                .ok_or_else(|| ctx.err("unterminated section header"))?
                .trim();
            section = Some(
                SECTIONS
                    .iter()
                    .find(|&&known| known == s)
                    .copied()
                    .ok_or_else(|| ctx.err(format!("unknown section '{s}'")))?,
            );
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ctx.err("expected 'key = value'"))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| ctx.err(format!("key '{key}' outside any section")))?;
        if let Some(first) = seen.insert((sec.to_string(), key.to_string()), ctx.line) {
            return Err(ctx.err(format!("duplicate key '{key}' (first on line {first})")));
        }
        apply(&mut cfg, sec, key, value, &ctx)?;
    }
    cfg.protocol.alpha = cfg.losses.alpha;

    let check = |r: Result<()>| r.map_err(|e| Error::parse(name, Position::Line(text.lines().count()), e.to_string()));
    check(cfg.normalization.validate())?;
    check(cfg.augment.validate())?;
    check(cfg.protocol.validate())?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, section: &str, key: &str, v: &str, ctx: &Ctx<'_>) -> Result<()> {
    let unknown = || Err(ctx.err(format!("unknown key '{key}' in [{section}]")));
    match section {
        "normalization" => {
            let n = &mut cfg.normalization;
            match key {
                "focal_norm" => n.focal_norm = ctx.f64(v)?,
                "distance_norm" => n.distance_norm = ctx.f64(v)?,
                "width" => n.out_width = ctx.usize(v)?,
                "height" => n.out_height = ctx.usize(v)?,
                _ => return unknown(),
            }
        }
        "camera" => {
            let parts: Vec<&str> = v.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(ctx.err("camera needs 'fx fy cx cy'"));
            }
            let k = CameraIntrinsics::new(ctx.f64(parts[0])?, ctx.f64(parts[1])?, ctx.f64(parts[2])?, ctx.f64(parts[3])?)
                .map_err(|e| ctx.err(e.to_string()))?;
            cfg.cameras.insert(key.to_string(), k);
        }
        "augment" => {
            let a = &mut cfg.augment;
            match key {
                "mode" => a.mode = ctx.parsed(v)?,
                "radius" => a.radius_deg = ctx.f64(v)?,
                "center" => a.center = ctx.parsed(v)?,
                "targets_per_source" => a.targets_per_source = ctx.usize(v)?,
                "sources_per_subject" => a.sources_per_subject = ctx.usize(v)?,
                "min_subject_samples" => a.min_subject_samples = ctx.usize(v)?,
                "background" => {
                    a.background = match v {
                        "solid" => BackgroundMode::Solid,
                        "pool" => BackgroundMode::Pool(cfg.paths.pool.clone().unwrap_or_default()),
                        _ => return Err(ctx.err(format!("background must be solid or pool, got '{v}'"))),
                    }
                }
                "label_tolerance" => a.label_tolerance_deg = ctx.f64(v)?,
                "texture" => a.texture = ctx.bool(v)?,
                "fit_rotation" => a.fit_rotation = ctx.bool(v)?,
                _ => return unknown(),
            }
        }
        "protocol" => {
            let p = &mut cfg.protocol;
            match key {
                "targets_per_source" => p.targets_per_source = ctx.usize(v)?,
                "radius" => p.radius_deg = ctx.f64(v)?,
                "sources_per_subject" => p.sources_per_subject = ctx.usize(v)?,
                "pattern" => p.pattern = ctx.parsed(v)?,
                "center" => p.center = ctx.parsed(v)?,
                "bin_width" => p.bin_width_deg = ctx.f64(v)?,
                _ => return unknown(),
            }
        }
        "losses" => {
            let l = &mut cfg.losses;
            match key {
                "alpha" => l.alpha = ctx.f64(v)?,
                "lambda_id" => l.lambda_id = ctx.f64(v)?,
                "lambda_rec" => l.lambda_rec = ctx.f64(v)?,
                _ => return unknown(),
            }
        }
        "redirect" => match key {
            "embedding_rows" => cfg.embedding_rows = ctx.usize(v)?,
            _ => return unknown(),
        },
        "paths" => {
            let p = Some(PathBuf::from(v));
            match key {
                "manifest" => cfg.paths.manifest = p,
                "raw" => cfg.paths.raw = p,
                "out" => cfg.paths.out = p,
                "pool" => {
                    if let BackgroundMode::Pool(dir) = &mut cfg.augment.background {
                        *dir = PathBuf::from(v);
                    }
                    cfg.paths.pool = p;
                }
                _ => return unknown(),
            }
        }
        _ => unreachable!("section names are checked when the header is read"),
    }
    Ok(())
}

impl RunConfig {
    /// Joins relative paths onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.manifest,
            &mut self.paths.raw,
            &mut self.paths.out,
            &mut self.paths.pool,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let BackgroundMode::Pool(dir) = &mut self.augment.background {
            if dir.is_relative() && !dir.as_os_str().is_empty() {
                *dir = base.join(&*dir);
            }
        }
    }
}

/// Canonical text form; parsing it yields the same value.
pub fn config_to_string(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let n = &cfg.normalization;
    let _ = writeln!(s, "[normalization]");
    let _ = writeln!(s, "focal_norm = {}", n.focal_norm);
    let _ = writeln!(s, "distance_norm = {}", n.distance_norm);
    let _ = writeln!(s, "width = {}", n.out_width);
    let _ = writeln!(s, "height = {}", n.out_height);
    if !cfg.cameras.is_empty() {
        let _ = writeln!(s, "\n[camera]");
        for (id, k) in &cfg.cameras {
            let _ = writeln!(s, "{id} = {} {} {} {}", k.fx, k.fy, k.cx, k.cy);
        }
    }
    let a = &cfg.augment;
    let _ = writeln!(s, "\n[augment]");
    let _ = writeln!(s, "mode = {}", a.mode);
    let _ = writeln!(s, "radius = {}", a.radius_deg);
    let _ = writeln!(s, "center = {}", a.center);
    let _ = writeln!(s, "targets_per_source = {}", a.targets_per_source);
    let _ = writeln!(s, "sources_per_subject = {}", a.sources_per_subject);
    let _ = writeln!(s, "min_subject_samples = {}", a.min_subject_samples);
    let bg = match a.background {
        BackgroundMode::Solid => "solid",
        BackgroundMode::Pool(_) => "pool",
    };
    let _ = writeln!(s, "background = {bg}");
    let _ = writeln!(s, "label_tolerance = {}", a.label_tolerance_deg);
    let _ = writeln!(s, "texture = {}", a.texture);
    let _ = writeln!(s, "fit_rotation = {}", a.fit_rotation);
    let p = &cfg.protocol;
    let _ = writeln!(s, "\n[protocol]");
    let _ = writeln!(s, "targets_per_source = {}", p.targets_per_source);
    let _ = writeln!(s, "radius = {}", p.radius_deg);
    let _ = writeln!(s, "sources_per_subject = {}", p.sources_per_subject);
    let _ = writeln!(s, "pattern = {}", p.pattern);
    let _ = writeln!(s, "center = {}", p.center);
    let _ = writeln!(s, "bin_width = {}", p.bin_width_deg);
    let l = &cfg.losses;
    let _ = writeln!(s, "\n[losses]");
    let _ = writeln!(s, "alpha = {}", l.alpha);
    let _ = writeln!(s, "lambda_id = {}", l.lambda_id);
    let _ = writeln!(s, "lambda_rec = {}", l.lambda_rec);
    let _ = writeln!(s, "\n[redirect]");
    let _ = writeln!(s, "embedding_rows = {}", cfg.embedding_rows);
    let paths = [
        ("manifest", &cfg.paths.manifest),
        ("raw", &cfg.paths.raw),
        ("out", &cfg.paths.out),
        ("pool", &cfg.paths.pool),
    ];
    if paths.iter().any(|(_, p)| p.is_some()) {
        let _ = writeln!(s, "\n[paths]");
        for (k, p) in paths {
            if let Some(p) = p {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
    }
    s
}

/// Reads a config file and resolves its relative paths against the file's
/// directory.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = super::read_to_string(path)?;
    let mut cfg = parse_config(&text, &path.display().to_string())?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{SamplingMode, TargetCenter};
    use crate::redirect::RedirectPattern;

    #[test]
    fn defaults_without_file_content() {
        let cfg = parse_config("", "c").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn parses_every_section() {
        let text = "\
# run
[normalization]
focal_norm = 960
width = 224
height = 224

[camera]
cam0 = 1000 1000 320 240

[augment]
mode = gaze
radius = 40
center = source
background = pool

[protocol]
pattern = head-only
bin_width = 5

[losses]
alpha = 0.5

[redirect]
embedding_rows = 8

[paths]
pool = backgrounds
";
        let cfg = parse_config(text, "c").unwrap();
        assert_eq!(cfg.normalization.focal_norm, 960.0);
        assert_eq!(cfg.cameras["cam0"].cx, 320.0);
        assert_eq!(cfg.augment.mode, SamplingMode::GazeBased);
        assert_eq!(cfg.augment.radius_deg, 40.0);
        assert_eq!(cfg.augment.center, TargetCenter::Source);
        assert_eq!(cfg.augment.background, BackgroundMode::Pool("backgrounds".into()));
        assert_eq!(cfg.protocol.pattern, RedirectPattern::HeadOnly);
        assert_eq!(cfg.protocol.alpha, 0.5);
        assert_eq!(cfg.embedding_rows, 8);
        let again = parse_config(&config_to_string(&cfg), "c").unwrap();
        assert_eq!(again, cfg);
    }

    fn error_line(text: &str) -> usize {
        match parse_config(text, "c").unwrap_err() {
            Error::Parse {
                position: Position::Line(n),
                ..
            } => n,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert_eq!(error_line("[augment]\nradius = 40\nradiuss = 40\n"), 3);
        assert_eq!(error_line("[nope]\n"), 1);
        assert_eq!(error_line("radius = 40\n"), 1);
        assert_eq!(error_line("[augment]\nradius = 40\nradius = 50\n"), 3);
        assert_eq!(error_line("[augment]\nradius = abc\n"), 2);
        assert_eq!(error_line("[augment\n"), 1);
        assert_eq!(error_line("[camera]\nc = 1 2 3\n"), 2);
    }

    #[test]
    fn semantic_validation_runs_after_parse() {
        assert!(parse_config("[augment]\nradius = 120\n", "c").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut cfg = parse_config("[paths]\nmanifest = m.jsonl\nout = /abs\n", "c").unwrap();
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.paths.manifest, Some(PathBuf::from("/base/m.jsonl")));
        assert_eq!(cfg.paths.out, Some(PathBuf::from("/abs")));
    }
}
