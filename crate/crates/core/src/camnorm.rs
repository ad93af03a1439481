//! Camera model and data normalization.
//!
//! Normalization warps a captured image into a virtual camera that looks
//! straight at the face center from a fixed distance, with the virtual `x`
//! axis aligned to the head's `x` axis so that head roll is removed. Labels
//! are rotated by the same normalization rotation `R_n`; the distance scaling
//! only affects pixels.
//!
//! This is the 3D-scaling variant (`W = C_n · S · R_n · C_r⁻¹`). The other
//! common variant scales only in the image plane and leaves the translation
//! of the head unscaled; labels are identical in both.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{direction_to_vector, Direction, Rotation3, UnitVector3};
use crate::raster::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite())
            || !cx.is_finite()
            || !cy.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "intrinsics need positive finite focal lengths (fx = {fx}, fy = {fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Virtual camera used for normalized images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    /// Focal length of the virtual camera, pixels.
    pub focal_norm: f64,
    /// Distance from the virtual camera to the face center, millimeters.
    pub distance_norm: f64,
    pub out_width: usize,
    pub out_height: usize,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            focal_norm: 500.0,
            distance_norm: 600.0,
            out_width: 128,
            out_height: 128,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.focal_norm > 0.0
            && self.distance_norm > 0.0
            && self.focal_norm.is_finite()
            && self.distance_norm.is_finite()
            && self.out_width > 0
            && self.out_height > 0
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "normalization spec must be positive: {self:?}"
            )))
        }
    }

    /// Pinhole matrix of the virtual camera, principal point at the image center.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal_norm,
            fy: self.focal_norm,
            cx: self.out_width as f64 / 2.0,
            cy: self.out_height as f64 / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadPose {
    pub rotation: Rotation3,
    /// Camera coordinates, millimeters.
    pub translation: Vector3<f64>,
}

impl HeadPose {
    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Face-forward axis: the head rotation applied to `(0, 0, -1)`.
    pub fn forward(&self) -> UnitVector3 {
        UnitVector3::new_unchecked(self.rotation.apply(&Vector3::new(0.0, 0.0, -1.0)))
    }

    pub fn direction(&self) -> Direction {
        self.forward().to_direction()
    }
}

/// Projective 3×3 map between pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Option<Homography> {
        self.0.try_inverse().map(Homography)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.0 * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    /// 72 bytes: nine little-endian `f64`, row-major.
    pub fn to_le_bytes(&self) -> [u8; 72] {
        let mut out = [0u8; 72];
        for r in 0..3 {
            for c in 0..3 {
                let k = (r * 3 + c) * 8;
                out[k..k + 8].copy_from_slice(&self.0[(r, c)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8; 72]) -> Self {
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let k = (r * 3 + c) * 8;
                let mut b = [0u8; 8];
                b.copy_from_slice(&bytes[k..k + 8]);
                m[(r, c)] = f64::from_le_bytes(b);
            }
        }
        Homography(m)
    }
}

/// Rotation of the virtual camera: rows are `x_n = y_n × z_n`,
/// `y_n = normalize(z_n × x_head)`, `z_n = face_center / ‖face_center‖`.
pub fn normalization_rotation(face_center: &Vector3<f64>, head: &HeadPose) -> Result<Rotation3> {
    let dist = face_center.norm();
    if !(dist > 0.0) || !dist.is_finite() {
        return Err(Error::DegenerateGeometry(
            "face center must be a finite nonzero vector".into(),
        ));
    }
    let z = face_center / dist;
    let head_x = head.rotation.matrix().column(0).into_owned();
    let y = z.cross(&head_x);
    let y_norm = y.norm();
    if y_norm < 1e-8 {
        return Err(Error::DegenerateGeometry(
            "viewing direction is parallel to the head x axis".into(),
        ));
    }
    let y = y / y_norm;
    let x = y.cross(&z);
    let m = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Ok(Rotation3::from_matrix_unchecked(m))
}

/// `W = C_n · diag(1, 1, distance_norm / face_distance) · R_n · C_r⁻¹`.
pub fn normalization_warp(
    intrinsics: &CameraIntrinsics,
    rotation: &Rotation3,
    face_distance: f64,
    spec: &NormalizationSpec,
) -> Homography {
    let scale = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, spec.distance_norm / face_distance));
    Homography(spec.intrinsics().matrix() * scale * rotation.matrix() * intrinsics.inverse_matrix())
}

/// Resamples `image` through `warp` (source pixels → output pixels) into a
/// `width × height` image with bilinear, edge-clamped sampling.
pub fn warp_image(image: &ImageBuffer, warp: &Homography, width: usize, height: usize) -> Result<ImageBuffer> {
    let inv = warp
        .inverse()
        .ok_or_else(|| Error::DegenerateGeometry("warp is not invertible".into()))?;
    let mut out = ImageBuffer::new(width, height);
    out.data_mut()
        .par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..width {
                let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
                let c = if sx.is_finite() && sy.is_finite() {
                    image.sample_bilinear(sx, sy)
                } else {
                    [0.0; 3]
                };
                row[x * 3..x * 3 + 3].copy_from_slice(&c);
            }
        });
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct NormalizedSample {
    pub image: ImageBuffer,
    pub head: Direction,
    pub gaze: Direction,
    pub rotation: Rotation3,
    pub warp: Homography,
}

pub fn normalize_sample(
    image: &ImageBuffer,
    intrinsics: &CameraIntrinsics,
    head: &HeadPose,
    gaze_vector: &UnitVector3,
    face_center: &Vector3<f64>,
    spec: &NormalizationSpec,
) -> Result<NormalizedSample> {
    spec.validate()?;
    let rotation = normalization_rotation(face_center, head)?;
    let warp = normalization_warp(intrinsics, &rotation, face_center.norm(), spec);
    let out = warp_image(image, &warp, spec.out_width, spec.out_height)?;
    let gaze = rotation.rotate(gaze_vector).to_direction();
    let head_dir = rotation.rotate(&head.forward()).to_direction();
    Ok(NormalizedSample {
        image: out,
        head: head_dir,
        gaze,
        rotation,
        warp,
    })
}

/// Maps a direction in normalized space back to the original camera: `R_nᵀ · v(d)`.
pub fn denormalize_direction(d: Direction, rotation: &Rotation3) -> UnitVector3 {
    rotation.transpose().rotate(&direction_to_vector(d))
}
