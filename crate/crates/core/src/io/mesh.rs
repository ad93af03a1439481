//! Text mesh format, one record per line:
//!
//! ```text
//! v x y z r g b     vertex position (mm) and color in [0, 1]
//! f i j k           triangle, 1-based vertex indices
//! l i               landmark vertex, 1-based
//! c x y z           face center (optional; defaults to the landmark centroid)
//! p u v             observed pixel of the next landmark, in `l` order (optional)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Vertices are in model
//! space: the face looks along `-z` when frontal, `y` points down.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Position, Result};
use crate::facemesh::FaceMesh;
use crate::io::format_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshFile {
    pub mesh: FaceMesh,
    /// Observed landmark pixels aligned with `mesh.landmark_indices()`;
    /// empty when the file carries none.
    pub landmark_pixels: Vec<[f64; 2]>,
}

fn floats<const N: usize>(fields: &[&str], name: &str, line: usize) -> Result<[f64; N]> {
    if fields.len() != N {
        return Err(Error::parse(
            name,
            Position::Line(line),
            format!("expected {N} values, got {}", fields.len()),
        ));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        let v: f64 = f
            .parse()
            .map_err(|_| Error::parse(name, Position::Line(line), format!("invalid number '{f}'")))?;
        if !v.is_finite() {
            return Err(Error::parse(name, Position::Line(line), format!("non-finite value '{f}'")));
        }
        *o = v;
    }
    Ok(out)
}

fn indices<const N: usize>(fields: &[&str], name: &str, line: usize) -> Result<[usize; N]> {
    if fields.len() != N {
        return Err(Error::parse(
            name,
            Position::Line(line),
            format!("expected {N} indices, got {}", fields.len()),
        ));
    }
    let mut out = [0usize; N];
    for (o, f) in out.iter_mut().zip(fields) {
        let v: usize = f
            .parse()
            .map_err(|_| Error::parse(name, Position::Line(line), format!("invalid index '{f}'")))?;
        if v == 0 {
            return Err(Error::parse(name, Position::Line(line), "indices are 1-based"));
        }
        *o = v - 1;
    }
    Ok(out)
}

pub fn parse_mesh(text: &str, name: &str) -> Result<MeshFile> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles: Vec<([usize; 3], usize)> = Vec::new();
    let mut landmarks: Vec<(usize, usize)> = Vec::new();
    let mut pixels = Vec::new();
    let mut center = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let fields: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                let [x, y, z, r, g, b] = floats::<6>(&fields, name, line)?;
                if ![r, g, b].iter().all(|c| (0.0..=1.0).contains(c)) {
                    return Err(Error::parse(name, Position::Line(line), "color outside [0, 1]"));
                }
                vertices.push(Vector3::new(x, y, z));
                colors.push([r, g, b]);
            }
            "f" => triangles.push((indices::<3>(&fields, name, line)?, line)),
            "l" => landmarks.push((indices::<1>(&fields, name, line)?[0], line)),
            "c" => {
                if center.is_some() {
                    return Err(Error::parse(name, Position::Line(line), "duplicate face center"));
                }
                let [x, y, z] = floats::<3>(&fields, name, line)?;
                center = Some(Vector3::new(x, y, z));
            }
            "p" => pixels.push(floats::<2>(&fields, name, line)?),
            other => {
                return Err(Error::parse(name, Position::Line(line), format!("unknown record '{other}'")));
            }
        }
    }
    let n = vertices.len();
    for (t, line) in &triangles {
        if t.iter().any(|&i| i >= n) {
            return Err(Error::parse(name, Position::Line(*line), "triangle index out of range"));
        }
    }
    for (l, line) in &landmarks {
        if *l >= n {
            return Err(Error::parse(name, Position::Line(*line), "landmark index out of range"));
        }
    }
    if !pixels.is_empty() && pixels.len() != landmarks.len() {
        return Err(Error::parse(
            name,
            Position::Line(text.lines().count()),
            format!("{} landmark pixels for {} landmarks", pixels.len(), landmarks.len()),
        ));
    }
    let mesh = FaceMesh::new(
        vertices,
        triangles.into_iter().map(|(t, _)| t).collect(),
        colors,
        landmarks.into_iter().map(|(l, _)| l).collect(),
        center,
    )
    .map_err(|e| Error::parse(name, Position::Line(text.lines().count()), e.to_string()))?;
    Ok(MeshFile {
        mesh,
        landmark_pixels: pixels,
    })
}

pub fn mesh_to_string(file: &MeshFile) -> String {
    let mut out = String::new();
    let m = &file.mesh;
    for (v, c) in m.vertices().iter().zip(m.colors()) {
        out.push_str(&format!(
            "v {} {} {} {} {} {}\n",
            format_f64(v.x),
            format_f64(v.y),
            format_f64(v.z),
            format_f64(c[0]),
            format_f64(c[1]),
            format_f64(c[2])
        ));
    }
    for t in m.triangles() {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    for l in m.landmark_indices() {
        out.push_str(&format!("l {}\n", l + 1));
    }
    let c = m.face_center();
    out.push_str(&format!("c {} {} {}\n", format_f64(c.x), format_f64(c.y), format_f64(c.z)));
    for p in &file.landmark_pixels {
        out.push_str(&format!("p {} {}\n", format_f64(p[0]), format_f64(p[1])));
    }
    out
}

pub fn read_mesh(path: &Path) -> Result<MeshFile> {
    let text = super::read_to_string(path)?;
    parse_mesh(&text, &path.display().to_string())
}

pub fn write_mesh(path: &Path, file: &MeshFile) -> Result<()> {
    super::write_bytes(path, mesh_to_string(file).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# tetra\nv 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nv 0 0 1 0.5 0.5 0.5\n\nf 1 2 3\nf 1 2 4\nl 1\nl 2\nl 3\nl 4\np 10 10\np 20 10\np 10 20\np 15 15\n";

    #[test]
    fn parses_records() {
        let f = parse_mesh(SAMPLE, "t").unwrap();
        assert_eq!(f.mesh.vertices().len(), 4);
        assert_eq!(f.mesh.triangles(), &[[0, 1, 2], [0, 1, 3]]);
        assert_eq!(f.mesh.landmark_indices(), &[0, 1, 2, 3]);
        assert_eq!(f.landmark_pixels.len(), 4);
        assert!((f.mesh.face_center() - Vector3::new(0.25, 0.25, 0.25)).norm() < 1e-15);
    }

    #[test]
    fn write_read_round_trip() {
        let f = parse_mesh(SAMPLE, "t").unwrap();
        let text = mesh_to_string(&f);
        let back = parse_mesh(&text, "t").unwrap();
        assert_eq!(back, f);
        assert_eq!(mesh_to_string(&back), text);
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse {
                position: Position::Line(n),
                ..
            } => n,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines_are_located() {
        assert_eq!(line_of(parse_mesh("v 0 0 0 1 0 0\nv 1 2\n", "t").unwrap_err()), 2);
        assert_eq!(line_of(parse_mesh("v 0 0 0 1 0 0\nq 1\n", "t").unwrap_err()), 2);
        assert_eq!(line_of(parse_mesh("v 0 0 0 1 0 0\nv 0 0 0 1 0 0\nv 0 0 0 1 0 0\nf 1 2 9\n", "t").unwrap_err()), 4);
        assert_eq!(line_of(parse_mesh("v 0 0 0 1 0 0\nf 0 1 2\n", "t").unwrap_err()), 2);
        assert_eq!(line_of(parse_mesh("v 0 0 0 2 0 0\n", "t").unwrap_err()), 1);
        assert_eq!(line_of(parse_mesh("v 0 0 nan 1 0 0\n", "t").unwrap_err()), 1);
    }

    #[test]
    fn garbage_never_panics() {
        for text in ["", "\u{0}", "v", "f 1", "l x", "c 1 2", "p 1 2 3", "v 1e400 0 0 0 0 0"] {
            let _ = parse_mesh(text, "g");
        }
    }
}
