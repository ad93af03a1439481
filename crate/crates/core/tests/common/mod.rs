//! Toy datasets shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gazeaug::augment::ManifestEntry;
use gazeaug::facemesh::FaceMesh;
use gazeaug::io::image::write_png;
use gazeaug::io::manifest::write_manifest;
use gazeaug::io::mesh::{write_mesh, MeshFile};
use gazeaug::raster::ImageBuffer;
use gazeaug::Direction;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MESH: &str = "face.mesh";

/// An ellipsoidal cap facing `-z`: apex 35 mm in front of a 70×90 mm rim.
pub fn toy_mesh() -> MeshFile {
    let rings = 4;
    let segments = 16;
    let mut vertices = vec![Vector3::new(0.0, 0.0, -35.0)];
    let mut colors = vec![[0.9, 0.75, 0.6]];
    for r in 1..=rings {
        let t = r as f64 / rings as f64;
        let z = -35.0 * (1.0 - t * t).sqrt();
        for k in 0..segments {
            let a = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
            vertices.push(Vector3::new(35.0 * t * a.cos(), 45.0 * t * a.sin(), z));
            colors.push([0.5 + 0.4 * t, 0.3 + 0.3 * (k as f64 / segments as f64), 0.6 - 0.3 * t]);
        }
    }
    let mut triangles = Vec::new();
    for k in 0..segments {
        triangles.push([0, 1 + k, 1 + (k + 1) % segments]);
    }
    for r in 1..rings {
        let inner = 1 + (r - 1) * segments;
        let outer = 1 + r * segments;
        for k in 0..segments {
            let k2 = (k + 1) % segments;
            triangles.push([inner + k, outer + k, outer + k2]);
            triangles.push([inner + k, outer + k2, inner + k2]);
        }
    }
    let landmarks = (0..segments).step_by(2).map(|k| 1 + segments + k).collect();
    let mesh = FaceMesh::new(vertices, triangles, colors, landmarks, Some(Vector3::zeros())).unwrap();
    MeshFile {
        mesh,
        landmark_pixels: vec![],
    }
}

pub fn toy_image(seed: usize) -> ImageBuffer {
    let tint = (seed % 7) as f64 / 7.0;
    ImageBuffer::from_fn(128, 128, |x, y| {
        [
            x as f64 / 127.0,
            y as f64 / 127.0,
            (tint + ((x / 16 + y / 16) % 2) as f64 * 0.3).min(1.0),
        ]
    })
}

/// Writes `subjects × per_subject` rows with random labels, one shared mesh
/// and one PNG per row, and returns the manifest path.
pub fn write_toy_dataset(dir: &Path, subjects: usize, per_subject: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    write_mesh(&dir.join(MESH), &toy_mesh()).unwrap();
    let mut entries = Vec::new();
    for s in 0..subjects {
        for i in 0..per_subject {
            let row = entries.len();
            let head = Direction::from_degrees(rng.random_range(-25.0..25.0), rng.random_range(-35.0..35.0));
            let gaze = Direction::new(
                head.pitch + rng.random_range(-0.4..0.4),
                head.yaw + rng.random_range(-0.5..0.5),
            );
            let image_path = format!("img/s{s}_{i:03}.png");
            write_png(&dir.join(&image_path), &toy_image(row)).unwrap();
            entries.push(ManifestEntry {
                subject_id: format!("subject-{s}"),
                image_path,
                mesh_path: MESH.into(),
                head,
                gaze,
                camera_id: "cam0".into(),
            });
        }
    }
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, &entries).unwrap();
    path
}

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gazeaug"));
    c.env("RUST_LOG", "error");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Every file under `dir`, keyed by its relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
