//! Software rasterizer for augmented renders.
//!
//! Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`. A pixel is covered
//! by a triangle when its center lies strictly inside, or exactly on an edge
//! that is a top or left edge (top-left fill rule). Vertex colors are
//! interpolated perspective-correctly and the nearest surface wins.

use nalgebra::Vector3;
use rand::Rng;

use crate::camnorm::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::facemesh::FaceMesh;

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Wraps raw row-major RGB data. Values are not range-checked here; see
    /// [`ImageBuffer::validate`].
    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Checks that every channel is finite and inside `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        match self
            .data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "image channel {} (value {})",
                i, self.data[i]
            ))),
        }
    }

    /// Bilinear sample at continuous image coordinates, clamping to the edge.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let clamp_x = |v: f64| v.clamp(0.0, (self.width - 1) as f64) as usize;
        let clamp_y = |v: f64| v.clamp(0.0, (self.height - 1) as f64) as usize;
        let (xa, xb) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let (ya, yb) = (clamp_y(y0), clamp_y(y0 + 1.0));
        let p00 = self.get(xa, ya);
        let p10 = self.get(xb, ya);
        let p01 = self.get(xa, yb);
        let p11 = self.get(xb, yb);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + (p10[c] - p00[c]) * tx;
            let bottom = p01[c] + (p11[c] - p01[c]) * tx;
            out[c] = top + (bottom - top) * ty;
        }
        out
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> ImageBuffer {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        ImageBuffer::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy)
        })
    }

    /// Per-pixel channel mean.
    pub fn to_gray(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DepthBuffer {
    width: usize,
    height: usize,
    depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedVertex {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

/// Pinhole projection of a camera-space point in millimeters.
pub fn project_vertex(v: &Vector3<f64>, intrinsics: &CameraIntrinsics) -> Result<ProjectedVertex> {
    if v.z.is_nan() || v.z <= 0.0 {
        return Err(Error::BehindCamera { index: 0, z: v.z });
    }
    Ok(ProjectedVertex {
        x: intrinsics.fx * v.x / v.z + intrinsics.cx,
        y: intrinsics.fy * v.y / v.z + intrinsics.cy,
        depth: v.z,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenderReport {
    pub triangles: usize,
    pub drawn: usize,
    pub skipped_degenerate: usize,
    /// Triangles dropped because a vertex had `z <= 0`.
    pub skipped_behind_camera: usize,
    /// Vertex indices found behind the camera.
    pub behind_camera_vertices: Vec<usize>,
    pub covered_pixels: usize,
}

impl RenderReport {
    pub fn is_complete(&self) -> bool {
        self.skipped_behind_camera == 0
    }
}

#[derive(Debug, Clone)]
pub struct Render {
    pub image: ImageBuffer,
    pub depth: DepthBuffer,
    pub report: RenderReport,
}

fn edge(a: &ProjectedVertex, b: &ProjectedVertex, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

// For the winding with positive area (clockwise on screen, y down).
fn is_top_left(a: &ProjectedVertex, b: &ProjectedVertex) -> bool {
    let dy = b.y - a.y;
    let dx = b.x - a.x;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Z-buffered render of `mesh` over `background`.
///
/// Triangles with a vertex at `z <= 0` are skipped and counted in the report.
pub fn rasterize(mesh: &FaceMesh, intrinsics: &CameraIntrinsics, background: &ImageBuffer) -> Render {
    let (w, h) = (background.width(), background.height());
    let mut image = background.clone();
    let mut depth = DepthBuffer::new(w, h);
    let mut report = RenderReport {
        triangles: mesh.triangles().len(),
        ..Default::default()
    };
    let mut covered = vec![false; w * h];

    let projected: Vec<Option<ProjectedVertex>> = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = project_vertex(v, intrinsics).ok();
            if p.is_none() {
                report.behind_camera_vertices.push(i);
            }
            p
        })
        .collect();
    let colors = mesh.colors();

    for tri in mesh.triangles() {
        let (Some(p0), Some(p1), Some(p2)) = (projected[tri[0]], projected[tri[1]], projected[tri[2]])
        else {
            report.skipped_behind_camera += 1;
            continue;
        };
        let (mut i1, mut i2) = (tri[1], tri[2]);
        let (mut q1, mut q2) = (p1, p2);
        let mut area = edge(&p0, &q1, q2.x, q2.y);
        if !area.is_finite() || area == 0.0 {
            report.skipped_degenerate += 1;
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut q1, &mut q2);
            std::mem::swap(&mut i1, &mut i2);
            area = -area;
        }
        let q0 = p0;
        let c0 = colors[tri[0]];
        let c1 = colors[i1];
        let c2 = colors[i2];
        let (inv_z0, inv_z1, inv_z2) = (1.0 / q0.depth, 1.0 / q1.depth, 1.0 / q2.depth);

        let min_x = q0.x.min(q1.x).min(q2.x);
        let max_x = q0.x.max(q1.x).max(q2.x);
        let min_y = q0.y.min(q1.y).min(q2.y);
        let max_y = q0.y.max(q1.y).max(q2.y);
        if max_x < 0.5 || max_y < 0.5 || min_x > w as f64 - 0.5 || min_y > h as f64 - 0.5 {
            report.drawn += 1;
            continue;
        }
        let x_start = (min_x - 0.5).ceil().max(0.0) as usize;
        let x_end = ((max_x - 0.5).floor() as i64).min(w as i64 - 1);
        let y_start = (min_y - 0.5).ceil().max(0.0) as usize;
        let y_end = ((max_y - 0.5).floor() as i64).min(h as i64 - 1);
        let tl0 = is_top_left(&q1, &q2);
        let tl1 = is_top_left(&q2, &q0);
        let tl2 = is_top_left(&q0, &q1);

        for py in y_start as i64..=y_end {
            let cy = py as f64 + 0.5;
            for px in x_start as i64..=x_end {
                let cx = px as f64 + 0.5;
                let w0 = edge(&q1, &q2, cx, cy);
                let w1 = edge(&q2, &q0, cx, cy);
                let w2 = edge(&q0, &q1, cx, cy);
                let inside = (w0 > 0.0 || (w0 == 0.0 && tl0))
                    && (w1 > 0.0 || (w1 == 0.0 && tl1))
                    && (w2 > 0.0 || (w2 == 0.0 && tl2));
                if !inside {
                    continue;
                }
                let (b0, b1, b2) = (w0 / area, w1 / area, w2 / area);
                let inv_z = b0 * inv_z0 + b1 * inv_z1 + b2 * inv_z2;
                let z = 1.0 / inv_z;
                let idx = py as usize * w + px as usize;
                if z < depth.depth[idx] {
                    depth.depth[idx] = z;
                    let (a0, a1, a2) = (b0 * inv_z0 * z, b1 * inv_z1 * z, b2 * inv_z2 * z);
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        c[k] = (a0 * c0[k] + a1 * c1[k] + a2 * c2[k]).clamp(0.0, 1.0);
                    }
                    image.set(px as usize, py as usize, c);
                    covered[idx] = true;
                }
            }
        }
        report.drawn += 1;
    }
    report.covered_pixels = covered.iter().filter(|c| **c).count();
    Render {
        image,
        depth,
        report,
    }
}

#[derive(Debug, Clone)]
pub enum BackgroundSource {
    SolidColor,
    ImagePool(Vec<ImageBuffer>),
}

/// A uniformly random solid color, or a uniformly chosen pool image resized
/// to `width × height`.
pub fn random_background<R: Rng + ?Sized>(
    rng: &mut R,
    source: &BackgroundSource,
    width: usize,
    height: usize,
) -> Result<ImageBuffer> {
    match source {
        BackgroundSource::SolidColor => {
            let color = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            Ok(ImageBuffer::filled(width, height, color))
        }
        BackgroundSource::ImagePool(pool) => {
            if pool.is_empty() {
                return Err(Error::EmptyPool);
            }
            let pick = rng.random_range(0..pool.len());
            Ok(pool[pick].resize_bilinear(width, height))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facemesh::FaceMesh;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 64.0, 64.0).unwrap()
    }

    fn mesh(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>, colors: Vec<[f64; 3]>) -> FaceMesh {
        FaceMesh::new(vertices, triangles, colors, vec![], None).unwrap()
    }

    // Camera-space point that projects to pixel coordinate (x, y) at depth z.
    fn at(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new((x - 64.0) * z / 500.0, (y - 64.0) * z / 500.0, z)
    }

    #[test]
    fn project_on_axis() {
        let p = project_vertex(&Vector3::new(0.0, 0.0, 600.0), &intrinsics()).unwrap();
        assert_eq!((p.x, p.y, p.depth), (64.0, 64.0, 600.0));
    }

    #[test]
    fn project_doubling_depth_halves_offset() {
        let a = project_vertex(&Vector3::new(30.0, -12.0, 400.0), &intrinsics()).unwrap();
        let b = project_vertex(&Vector3::new(30.0, -12.0, 800.0), &intrinsics()).unwrap();
        assert!(((a.x - 64.0) / 2.0 - (b.x - 64.0)).abs() < 1e-12);
        assert!(((a.y - 64.0) / 2.0 - (b.y - 64.0)).abs() < 1e-12);
    }

    #[test]
    fn project_behind_camera() {
        let err = project_vertex(&Vector3::new(0.0, 0.0, 0.0), &intrinsics()).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { .. }));
    }

    #[test]
    fn empty_mesh_leaves_background() {
        let bg = ImageBuffer::filled(16, 16, [0.2, 0.4, 0.6]);
        let m = mesh(
            vec![at(1.0, 1.0, 500.0), at(2.0, 1.0, 500.0), at(1.0, 2.0, 500.0)],
            vec![],
            vec![[1.0; 3]; 3],
        );
        let out = rasterize(&m, &intrinsics(), &bg);
        assert_eq!(out.image, bg);
        assert_eq!(out.report.covered_pixels, 0);
    }

    #[test]
    fn shared_edge_covers_each_pixel_once() {
        // Two triangles forming a square with a diagonal through pixel centers.
        let v = vec![
            at(2.0, 2.0, 500.0),
            at(12.0, 2.0, 500.0),
            at(12.0, 12.0, 500.0),
            at(2.0, 12.0, 500.0),
        ];
        let colors = vec![[1.0, 0.0, 0.0]; 4];
        let bg = ImageBuffer::new(16, 16);
        let a = rasterize(&mesh(v.clone(), vec![[0, 1, 2]], colors.clone()), &intrinsics(), &bg);
        let b = rasterize(&mesh(v.clone(), vec![[0, 2, 3]], colors.clone()), &intrinsics(), &bg);
        let both = rasterize(&mesh(v, vec![[0, 1, 2], [0, 2, 3]], colors), &intrinsics(), &bg);
        assert_eq!(a.report.covered_pixels + b.report.covered_pixels, 100);
        assert_eq!(both.report.covered_pixels, 100);
    }

    #[test]
    fn nearer_triangle_wins() {
        let near = vec![at(2.0, 2.0, 500.0), at(14.0, 2.0, 500.0), at(2.0, 14.0, 500.0)];
        let far = vec![at(3.0, 3.0, 700.0), at(15.0, 3.0, 700.0), at(3.0, 15.0, 700.0)];
        let mut vertices = far.clone();
        vertices.extend(near);
        let mut colors = vec![[0.0, 0.0, 1.0]; 3];
        colors.extend(vec![[1.0, 0.0, 0.0]; 3]);
        let bg = ImageBuffer::new(16, 16);
        // Draw the far triangle last to make sure order does not matter.
        let out = rasterize(&mesh(vertices, vec![[3, 4, 5], [0, 1, 2]], colors), &intrinsics(), &bg);
        assert_eq!(out.image.get(4, 4), [1.0, 0.0, 0.0]);
        assert_eq!(out.image.get(12, 4), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn behind_camera_triangles_are_counted() {
        let v = vec![at(2.0, 2.0, 500.0), at(12.0, 2.0, 500.0), Vector3::new(0.0, 0.0, -10.0)];
        let out = rasterize(
            &mesh(v, vec![[0, 1, 2]], vec![[1.0; 3]; 3]),
            &intrinsics(),
            &ImageBuffer::new(16, 16),
        );
        assert_eq!(out.report.skipped_behind_camera, 1);
        assert_eq!(out.report.behind_camera_vertices, vec![2]);
        assert!(!out.report.is_complete());
    }

    #[test]
    fn perspective_correct_midpoint() {
        // Edge from depth 400 (black) to depth 1200 (white): the screen midpoint
        // sees the point whose 1/z is the average, i.e. weight 1/4 on white.
        let v = vec![
            at(0.0, 0.0, 400.0),
            at(32.0, 0.0, 1200.0),
            at(0.0, 32.0, 400.0),
            at(32.0, 32.0, 1200.0),
        ];
        let colors = vec![[0.0; 3], [1.0; 3], [0.0; 3], [1.0; 3]];
        let out = rasterize(
            &mesh(v, vec![[0, 1, 3], [0, 3, 2]], colors),
            &intrinsics(),
            &ImageBuffer::new(32, 32),
        );
        // pixel 15 has center 15.5; screen fraction t = 15.5 / 32.
        let t: f64 = 15.5 / 32.0;
        let expected = (t / 1200.0) / ((1.0 - t) / 400.0 + t / 1200.0);
        assert!((out.image.get(15, 10)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn bilinear_sample_at_pixel_center() {
        let img = ImageBuffer::from_fn(4, 4, |x, y| [x as f64 / 4.0, y as f64 / 4.0, 0.5]);
        assert_eq!(img.sample_bilinear(2.5, 1.5), img.get(2, 1));
        assert_eq!(img.sample_bilinear(-10.0, -10.0), img.get(0, 0));
        let mid = img.sample_bilinear(2.0, 1.5);
        assert!((mid[0] - 1.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn solid_background_single_color_and_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let x = random_background(&mut a, &BackgroundSource::SolidColor, 8, 8).unwrap();
        let y = random_background(&mut b, &BackgroundSource::SolidColor, 8, 8).unwrap();
        assert_eq!(x, y);
        let first = x.get(0, 0);
        assert!((0..8).all(|j| (0..8).all(|i| x.get(i, j) == first)));
    }

    #[test]
    fn solid_background_channel_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut sums = [0.0; 3];
        let n = 10_000;
        for _ in 0..n {
            let img = random_background(&mut rng, &BackgroundSource::SolidColor, 1, 1).unwrap();
            let c = img.get(0, 0);
            for k in 0..3 {
                sums[k] += c[k];
            }
        }
        for s in sums {
            let mean = s / n as f64;
            assert!((0.48..=0.52).contains(&mean), "mean {mean}");
        }
    }

    #[test]
    fn pool_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let err = random_background(&mut rng, &BackgroundSource::ImagePool(vec![]), 4, 4).unwrap_err();
        assert!(matches!(err, Error::EmptyPool));
        let pool = vec![ImageBuffer::filled(2, 2, [0.1, 0.2, 0.3])];
        let img = random_background(&mut rng, &BackgroundSource::ImagePool(pool), 5, 3).unwrap();
        assert_eq!((img.width(), img.height()), (5, 3));
        assert!((img.get(4, 2)[2] - 0.3).abs() < 1e-15);
    }
}
