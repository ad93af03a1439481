//! JSON-lines manifests.
//!
//! One object per line with keys, in this order: `subject`, `image`, `mesh`,
//! `head_pitch`, `head_yaw`, `gaze_pitch`, `gaze_yaw`, `camera`. Angles are
//! radians. The writer emits exactly this key order and 17-digit floats, so
//! re-writing a parsed canonical file reproduces it byte for byte.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::augment::ManifestEntry;
use crate::error::{Error, Position, Result};
use crate::geometry::Direction;
use crate::io::format_f64;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    subject: String,
    image: String,
    mesh: String,
    head_pitch: f64,
    head_yaw: f64,
    gaze_pitch: f64,
    gaze_yaw: f64,
    camera: String,
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// One canonical manifest line, without the trailing newline.
pub fn format_entry(e: &ManifestEntry) -> Result<String> {
    for (name, v) in [
        ("head_pitch", e.head.pitch),
        ("head_yaw", e.head.yaw),
        ("gaze_pitch", e.gaze.pitch),
        ("gaze_yaw", e.gaze.yaw),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} of manifest row for {}", e.image_path)));
        }
    }
    Ok(format!(
        "{{\"subject\":{},\"image\":{},\"mesh\":{},\"head_pitch\":{},\"head_yaw\":{},\"gaze_pitch\":{},\"gaze_yaw\":{},\"camera\":{}}}",
        json_string(&e.subject_id),
        json_string(&e.image_path),
        json_string(&e.mesh_path),
        format_f64(e.head.pitch),
        format_f64(e.head.yaw),
        format_f64(e.gaze.pitch),
        format_f64(e.gaze.yaw),
        json_string(&e.camera_id),
    ))
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format_entry(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    super::write_bytes(path, manifest_to_string(entries)?.as_bytes())
}

/// Streams rows to a writer; used for large outputs written incrementally.
pub struct ManifestWriter<W: Write> {
    inner: W,
}

impl<W: Write> ManifestWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn write(&mut self, e: &ManifestEntry) -> std::io::Result<()> {
        let line = format_entry(e).map_err(|err| std::io::Error::new(std::io::ErrorKind::InvalidData, err.to_string()))?;
        self.inner.write_all(line.as_bytes())?;
        self.inner.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Parses manifest text. Blank lines are skipped; every other line must be a
/// complete row with valid directions and nonempty paths.
pub fn parse_manifest(text: &str, source_name: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line)
            .map_err(|e| Error::parse(source_name, Position::Line(line_no), e.to_string()))?;
        let entry = ManifestEntry {
            subject_id: row.subject,
            image_path: row.image,
            mesh_path: row.mesh,
            head: Direction::new(row.head_pitch, row.head_yaw),
            gaze: Direction::new(row.gaze_pitch, row.gaze_yaw),
            camera_id: row.camera,
        };
        entry
            .validate()
            .map_err(|e| Error::parse(source_name, Position::Line(line_no), e.to_string()))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = super::read_to_string(path)?;
    parse_manifest(&text, &path.display().to_string())
}

/// Un-normalized capture used as input to normalization.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSample {
    pub subject: String,
    pub image: String,
    pub mesh: String,
    pub camera: String,
    /// Row-major 3×3 head rotation (camera coordinates).
    pub head_rotation: [f64; 9],
    /// Millimeters.
    pub head_translation: [f64; 3],
    /// Millimeters.
    pub face_center: [f64; 3],
    pub gaze_vector: [f64; 3],
}

pub fn parse_raw_samples(text: &str, source_name: &str) -> Result<Vec<RawSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: RawSample = serde_json::from_str(line)
            .map_err(|e| Error::parse(source_name, Position::Line(i + 1), e.to_string()))?;
        out.push(row);
    }
    Ok(out)
}

pub fn read_raw_samples(path: &Path) -> Result<Vec<RawSample>> {
    let text = super::read_to_string(path)?;
    parse_raw_samples(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn entry(yaw: f64) -> ManifestEntry {
        ManifestEntry {
            subject_id: "s\"01".into(),
            image_path: "img/0.png".into(),
            mesh_path: "mesh/0.mesh".into(),
            head: Direction::new(0.1, yaw),
            gaze: Direction::new(-0.2, 0.3),
            camera_id: "cam0".into(),
        }
    }

    #[test]
    fn yaw_pi_round_trips_bitwise() {
        let text = manifest_to_string(&[entry(PI)]).unwrap();
        let back = parse_manifest(&text, "m").unwrap();
        assert_eq!(back[0].head.yaw.to_bits(), PI.to_bits());
        assert_eq!(manifest_to_string(&back).unwrap(), text);
    }

    #[test]
    fn canonical_key_order() {
        let text = manifest_to_string(&[entry(0.0)]).unwrap();
        let keys = ["subject", "image", "mesh", "head_pitch", "head_yaw", "gaze_pitch", "gaze_yaw", "camera"];
        let positions: Vec<usize> = keys.iter().map(|k| text.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let good = format_entry(&entry(0.0)).unwrap();
        let text = format!("{good}\n\n{{\"subject\":1}}\n");
        let err = parse_manifest(&text, "m.jsonl").unwrap_err();
        match err {
            Error::Parse { position, .. } => assert_eq!(position, Position::Line(3)),
            other => panic!("{other:?}"),
        }
        let unknown = good.replace("\"camera\"", "\"extra\":1,\"camera\"");
        assert!(parse_manifest(&unknown, "m").is_err());
        let bad_dir = good.replace("\"head_pitch\":1.0000000000000001e-1", "\"head_pitch\":2.0");
        assert!(matches!(parse_manifest(&bad_dir, "m"), Err(Error::Parse { .. })));
        let empty_path = good.replace("\"img/0.png\"", "\"\"");
        assert!(parse_manifest(&empty_path, "m").is_err());
    }

    #[test]
    fn raw_samples_parse() {
        let line = r#"{"subject":"a","image":"x.png","mesh":"m.mesh","camera":"c","head_rotation":[1,0,0,0,1,0,0,0,1],"head_translation":[0,0,600],"face_center":[0,0,600],"gaze_vector":[0,0,-1]}"#;
        let rows = parse_raw_samples(line, "raw").unwrap();
        assert_eq!(rows[0].face_center, [0.0, 0.0, 600.0]);
        assert!(parse_raw_samples("{\"subject\":\"a\"}", "raw").is_err());
    }

    proptest! {
        #[test]
        fn write_read_write_is_byte_identical(
            hp in -1.5f64..1.5, hy in -3.1f64..3.1, gp in -1.5f64..1.5, gy in -3.1f64..3.1,
            subject in "[a-zA-Z0-9_ \\-é]{1,12}",
        ) {
            let e = ManifestEntry {
                subject_id: subject,
                image_path: "i.png".into(),
                mesh_path: "m.mesh".into(),
                head: Direction::new(hp, hy),
                gaze: Direction::new(gp, gy),
                camera_id: "c".into(),
            };
            let text = manifest_to_string(std::slice::from_ref(&e)).unwrap();
            let back = parse_manifest(&text, "p").unwrap();
            prop_assert_eq!(&back[0], &e);
            prop_assert_eq!(manifest_to_string(&back).unwrap(), text);
        }
    }
}
