//! Reconstructed face meshes: placement into camera space, texture lifting,
//! and label-exact rigid rotation.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::camnorm::{CameraIntrinsics, HeadPose};
use crate::error::{Error, Result};
use crate::geometry::{rotation_between, Direction, Rotation3, UnitVector3};
use crate::raster::ImageBuffer;

/// Colored triangle mesh. Vertices are in millimeters; colors are RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
    colors: Vec<[f64; 3]>,
    landmark_indices: Vec<usize>,
    face_center: Vector3<f64>,
}

impl FaceMesh {
    /// Validates indices and colors. Without an explicit `face_center` the
    /// centroid of the landmark vertices is used (all vertices if there are
    /// no landmarks).
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[usize; 3]>,
        colors: Vec<[f64; 3]>,
        landmark_indices: Vec<usize>,
        face_center: Option<Vector3<f64>>,
    ) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!("mesh needs at least 3 vertices, got {n}")));
        }
        if colors.len() != n {
            return Err(Error::DimensionMismatch(format!("{} colors for {} vertices", colors.len(), n)));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("vertex {i}")));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| !c.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidArgument(format!("color of vertex {i} outside [0, 1]")));
        }
        if let Some(t) = triangles.iter().position(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!("triangle {t} references a vertex out of range")));
        }
        if let Some(&i) = landmark_indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("landmark vertex {i} out of range")));
        }
        let face_center = match face_center {
            Some(c) => c,
            None if landmark_indices.is_empty() => centroid(vertices.iter()),
            None => centroid(landmark_indices.iter().map(|&i| &vertices[i])),
        };
        if !face_center.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("face center".into()));
        }
        Ok(Self {
            vertices,
            triangles,
            colors,
            landmark_indices,
            face_center,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn landmark_indices(&self) -> &[usize] {
        &self.landmark_indices
    }

    pub fn face_center(&self) -> Vector3<f64> {
        self.face_center
    }

    pub fn landmark_vertices(&self) -> Vec<Vector3<f64>> {
        self.landmark_indices.iter().map(|&i| self.vertices[i]).collect()
    }

    /// Same mesh with vertices and face center mapped through `t`.
    pub fn transformed(&self, t: &SimilarityTransform) -> FaceMesh {
        FaceMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            face_center: t.apply(&self.face_center),
            ..self.clone()
        }
    }

    pub fn with_colors(&self, colors: Vec<[f64; 3]>) -> Result<FaceMesh> {
        FaceMesh::new(
            self.vertices.clone(),
            self.triangles.clone(),
            colors,
            self.landmark_indices.clone(),
            Some(self.face_center),
        )
    }
}

fn centroid<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> Vector3<f64> {
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for p in points {
        sum += p;
        n += 1;
    }
    sum / n as f64
}

/// A face mesh in camera space together with its head pose and gaze label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMesh {
    pub mesh: FaceMesh,
    pub head: HeadPose,
    pub gaze_vector: UnitVector3,
}

impl LabeledMesh {
    pub fn head_direction(&self) -> Direction {
        self.head.direction()
    }

    pub fn gaze_direction(&self) -> Direction {
        self.gaze_vector.to_direction()
    }
}

/// `x ↦ scale · R · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Rotation3, translation: Vector3<f64>) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(v) * self.scale + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    /// Also refine the rotation (7 DOF instead of 4).
    pub fit_rotation: bool,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            fit_rotation: false,
            max_iterations: 100,
            step_tolerance: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub transform: SimilarityTransform,
    /// Sum of squared pixel residuals at the returned transform.
    pub residual: f64,
    pub initial_residual: f64,
    pub iterations: usize,
}

struct Problem<'a> {
    model: Vec<Vector3<f64>>,
    observed: &'a [[f64; 2]],
    intrinsics: &'a CameraIntrinsics,
}

impl Problem<'_> {
    fn residuals(&self, t: &SimilarityTransform) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(self.model.len() * 2);
        for (k, (m, obs)) in self.model.iter().zip(self.observed).enumerate() {
            let p = t.apply(m);
            if !(p.z > 0.0) {
                return None;
            }
            r[2 * k] = self.intrinsics.fx * p.x / p.z + self.intrinsics.cx - obs[0];
            r[2 * k + 1] = self.intrinsics.fy * p.y / p.z + self.intrinsics.cy - obs[1];
        }
        Some(r)
    }

    // Columns: scale, tx, ty, then (optionally) a left rotation increment ω.
    // tz is not a column: (ks, kt) projects exactly like (s, t), so depth is
    // pinned at its initial value and scale absorbs the apparent size.
    fn jacobian(&self, t: &SimilarityTransform, fit_rotation: bool) -> DMatrix<f64> {
        let cols = if fit_rotation { 6 } else { 3 };
        let mut j = DMatrix::zeros(self.model.len() * 2, cols);
        let (fx, fy) = (self.intrinsics.fx, self.intrinsics.fy);
        for (k, m) in self.model.iter().enumerate() {
            let rm = t.rotation.apply(m);
            let q = rm * t.scale;
            let p = q + t.translation;
            let iz = 1.0 / p.z;
            // d(u, v) / d(X, Y, Z)
            let du = Vector3::new(fx * iz, 0.0, -fx * p.x * iz * iz);
            let dv = Vector3::new(0.0, fy * iz, -fy * p.y * iz * iz);
            let mut dxdp = vec![rm, Vector3::x(), Vector3::y()];
            if fit_rotation {
                // dX/dω = -[q]×, column c is e_c × q.
                dxdp.push(Vector3::x().cross(&q));
                dxdp.push(Vector3::y().cross(&q));
                dxdp.push(Vector3::z().cross(&q));
            }
            for (c, d) in dxdp.iter().enumerate() {
                j[(2 * k, c)] = du.dot(d);
                j[(2 * k + 1, c)] = dv.dot(d);
            }
        }
        j
    }
}

fn apply_step(t: &SimilarityTransform, step: &DVector<f64>) -> Option<SimilarityTransform> {
    let scale = t.scale + step[0];
    if !(scale > 0.0) {
        return None;
    }
    let translation = t.translation + Vector3::new(step[1], step[2], 0.0);
    let rotation = if step.len() == 6 {
        let w = Vector3::new(step[3], step[4], step[5]);
        let angle = w.norm();
        if angle > 0.0 {
            let axis = UnitVector3::new_unchecked(w / angle);
            Rotation3::from_axis_angle(&axis, angle) * t.rotation
        } else {
            t.rotation
        }
    } else {
        t.rotation
    };
    Some(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn is_rank_deficient(normal: &DMatrix<f64>) -> bool {
    // Jacobi-scale first so mm and unitless parameters are comparable.
    let n = normal.nrows();
    let d: Vec<f64> = (0..n).map(|i| normal[(i, i)]).collect();
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return true;
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| normal[(i, j)] / (d[i] * d[j]).sqrt());
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.amax();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    min <= max * 1e-12
}

/// Fits scale and translation (and the rotation, if requested) so that the
/// perspective projections of the landmark vertices match the observed
/// landmark pixels in the least-squares sense.
///
/// A similarity transform scaled about the camera center projects to the same
/// pixels, so the depth `translation.z` is kept at `init`'s value and only
/// scale, `tx` and `ty` move. Any other optimum is `(k·s, k·t)` of the result.
///
/// Levenberg-damped Gauss-Newton: damping starts at `initial_damping`, is
/// multiplied by 10 after a rejected step and divided by 10 after an accepted
/// one. Stops once the step norm drops below `step_tolerance`.
pub fn projective_match(
    model_vertices: &[Vector3<f64>],
    landmark_pixels: &[[f64; 2]],
    landmark_indices: &[usize],
    intrinsics: &CameraIntrinsics,
    init: &SimilarityTransform,
    options: &MatchOptions,
) -> Result<MatchResult> {
    if landmark_pixels.len() != landmark_indices.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} landmark pixels for {} landmark indices",
            landmark_pixels.len(),
            landmark_indices.len()
        )));
    }
    if landmark_indices.len() < 4 {
        return Err(Error::TooFewLandmarks {
            got: landmark_indices.len(),
            min: 4,
        });
    }
    if let Some(&i) = landmark_indices.iter().find(|&&i| i >= model_vertices.len()) {
        return Err(Error::InvalidArgument(format!("landmark vertex {i} out of range")));
    }
    if !(init.scale > 0.0) {
        return Err(Error::InvalidArgument("initial scale must be positive".into()));
    }
    let problem = Problem {
        model: landmark_indices.iter().map(|&i| model_vertices[i]).collect(),
        observed: landmark_pixels,
        intrinsics,
    };
    let mut current = *init;
    let mut residual = problem
        .residuals(&current)
        .ok_or(Error::BehindCamera { index: 0, z: 0.0 })?;
    let mut cost = residual.norm_squared();
    let initial_residual = cost;
    let mut lambda = options.initial_damping;

    for iteration in 1..=options.max_iterations {
        let j = problem.jacobian(&current, options.fit_rotation);
        let normal = j.transpose() * &j;
        if is_rank_deficient(&normal) {
            return Err(Error::SingularNormalEquations);
        }
        let gradient = j.transpose() * &residual;
        loop {
            let mut damped = normal.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda;
            }
            let step = match damped.cholesky() {
                Some(ch) => -ch.solve(&gradient),
                None => return Err(Error::SingularNormalEquations),
            };
            let step_norm = step.norm();
            let candidate = apply_step(&current, &step);
            let trial = candidate
                .as_ref()
                .and_then(|c| problem.residuals(c).map(|r| (*c, r)));
            match trial {
                Some((c, r)) if r.norm_squared() <= cost => {
                    let new_cost = r.norm_squared();
                    let improved = new_cost < cost;
                    current = c;
                    residual = r;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-15);
                    if step_norm < options.step_tolerance || !improved {
                        return Ok(MatchResult {
                            transform: current,
                            residual: cost,
                            initial_residual,
                            iterations: iteration,
                        });
                    }
                    break;
                }
                _ => {
                    if step_norm < options.step_tolerance {
                        return Ok(MatchResult {
                            transform: current,
                            residual: cost,
                            initial_residual,
                            iterations: iteration,
                        });
                    }
                    lambda *= 10.0;
                }
            }
        }
    }
    Err(Error::NoConvergence {
        last: Box::new(current),
        residual: cost,
        iterations: options.max_iterations,
    })
}

/// Colors every vertex with the bilinear image sample at its projection.
pub fn texture_from_image(mesh: &FaceMesh, image: &ImageBuffer, intrinsics: &CameraIntrinsics) -> Result<FaceMesh> {
    let mut colors = Vec::with_capacity(mesh.vertices().len());
    for (index, v) in mesh.vertices().iter().enumerate() {
        if !(v.z > 0.0) {
            return Err(Error::BehindCamera { index, z: v.z });
        }
        let x = intrinsics.fx * v.x / v.z + intrinsics.cx;
        let y = intrinsics.fy * v.y / v.z + intrinsics.cy;
        colors.push(image.sample_bilinear(x, y));
    }
    mesh.with_colors(colors)
}

/// Rigidly rotates the mesh and its labels about the face center.
pub fn rotate_about_center(lm: &LabeledMesh, rotation: &Rotation3) -> LabeledMesh {
    if *rotation == Rotation3::identity() {
        return lm.clone();
    }
    let c = lm.mesh.face_center();
    let about = |v: &Vector3<f64>| rotation.apply(&(v - c)) + c;
    let mesh = FaceMesh {
        vertices: lm.mesh.vertices.iter().map(about).collect(),
        ..lm.mesh.clone()
    };
    LabeledMesh {
        mesh,
        head: HeadPose {
            rotation: rotation * &lm.head.rotation,
            translation: about(&lm.head.translation),
        },
        gaze_vector: rotation.rotate(&lm.gaze_vector),
    }
}

/// Rotation for head-based sampling.
pub fn head_target_rotation(source_head: Direction, target_head: Direction) -> Rotation3 {
    rotation_between(source_head, target_head)
}

/// Rotation for gaze-based sampling.
pub fn gaze_target_rotation(source_gaze: Direction, target_gaze: Direction) -> Rotation3 {
    rotation_between(source_gaze, target_gaze)
}
