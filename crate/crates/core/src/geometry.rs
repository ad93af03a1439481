//! Angle, vector and rotation conventions shared by every other module.
//!
//! A [`Direction`] is a `(pitch, yaw)` pair in radians. The camera looks
//! along `+z` with image `y` pointing down, and the unit vector of a
//! direction is
//!
//! ```text
//! v = (-cos(pitch) sin(yaw), -sin(pitch), -cos(pitch) cos(yaw))
//! ```
//!
//! so the frontal direction `(0, 0)` points back at the camera, `(0, 0, -1)`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `‖v‖ - 1` accepted by [`vector_to_direction`].
pub const UNIT_INPUT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Direction {
    pub pitch: f64,
    pub yaw: f64,
}

impl Direction {
    pub const FRONTAL: Direction = Direction {
        pitch: 0.0,
        yaw: 0.0,
    };

    pub fn new(pitch: f64, yaw: f64) -> Self {
        Self { pitch, yaw }
    }

    pub fn from_degrees(pitch: f64, yaw: f64) -> Self {
        Self::new(pitch.to_radians(), yaw.to_radians())
    }

    /// `(pitch, yaw)` in degrees.
    pub fn to_degrees(self) -> (f64, f64) {
        (self.pitch.to_degrees(), self.yaw.to_degrees())
    }

    pub fn is_valid(&self) -> bool {
        self.pitch.is_finite()
            && self.yaw.is_finite()
            && self.pitch.abs() <= FRAC_PI_2
            && self.yaw > -PI
            && self.yaw <= PI
    }

    pub fn validate(self) -> Result<Self> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(Error::InvalidDirection {
                pitch: self.pitch,
                yaw: self.yaw,
            })
        }
    }

    pub fn vector(self) -> UnitVector3 {
        direction_to_vector(self)
    }

    /// Euclidean distance in `(pitch, yaw)` space; the metric used for disk sampling.
    pub fn planar_distance(self, other: Direction) -> f64 {
        (self.pitch - other.pitch).hypot(self.yaw - other.yaw)
    }
}

/// Maps any finite angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// A 3-vector of unit length (within 1e-9).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3(Vector3<f64>);

impl UnitVector3 {
    /// Normalizes `v`. Fails on a zero or non-finite vector.
    pub fn normalize(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() {
            return Err(Error::NonFinite("vector".into()));
        }
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self(v / n))
    }

    /// Accepts `v` when its norm is within `tol` of 1, then renormalizes.
    pub fn try_from_vector(v: Vector3<f64>, tol: f64) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > tol {
            return Err(Error::NonUnitInput { norm: n });
        }
        Ok(Self(v / n))
    }

    pub fn new_unchecked(v: Vector3<f64>) -> Self {
        Self(v)
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_vector(self) -> Vector3<f64> {
        self.0
    }

    pub fn to_direction(self) -> Direction {
        direction_from_unit(&self.0)
    }

    pub fn dot(&self, other: &UnitVector3) -> f64 {
        self.0.dot(&other.0)
    }
}

/// A proper rotation matrix (`RᵀR = I`, `det R = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checks orthonormality and determinant within `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let r = Self(m);
        if r.is_valid(tol) {
            Ok(r)
        } else {
            Err(Error::DegenerateGeometry(
                "matrix is not a proper rotation".into(),
            ))
        }
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Rotation by `angle` about `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &UnitVector3, angle: f64) -> Self {
        let k = axis.as_vector();
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        let (s, c) = angle.sin_cos();
        Self(Matrix3::identity() + kx * s + kx * kx * (1.0 - c))
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn rotate(&self, v: &UnitVector3) -> UnitVector3 {
        UnitVector3(self.0 * v.0)
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(values: &[f64; 9], tol: f64) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(values), tol)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let m = &self.0;
        m.iter().all(|v| v.is_finite())
            && (m.transpose() * m - Matrix3::identity()).amax() <= tol
            && (m.determinant() - 1.0).abs() <= tol
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

impl Mul for &Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: &Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

/// How a rotation between two directions is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationConstruction {
    /// `R(dst) · R(src)ᵀ` with `R(d) = Ry(yaw) · Rx(-pitch)`. Forms a group:
    /// `between(b, c) · between(a, b) = between(a, c)`.
    #[default]
    Composition,
    /// Smallest-angle rotation taking `v(src)` onto `v(dst)`. Does not compose.
    Minimal,
}

pub fn direction_to_vector(d: Direction) -> UnitVector3 {
    let (sp, cp) = d.pitch.sin_cos();
    let (sy, cy) = d.yaw.sin_cos();
    UnitVector3(Vector3::new(-cp * sy, -sp, -cp * cy))
}

/// Inverse of [`direction_to_vector`]: `pitch = -asin(y)`, `yaw = atan2(-x, -z)`.
pub fn vector_to_direction(v: &Vector3<f64>) -> Result<Direction> {
    let n = v.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_INPUT_TOLERANCE {
        return Err(Error::NonUnitInput { norm: n });
    }
    Ok(direction_from_unit(&(v / n)))
}

fn direction_from_unit(v: &Vector3<f64>) -> Direction {
    // atan2 form of -asin(y); better conditioned near the poles.
    let pitch = -v.y.atan2(v.x.hypot(v.z));
    // `+ 0.0` drops negative zeros so the poles get yaw 0 rather than π.
    let mut yaw = (-v.x + 0.0).atan2(-v.z + 0.0);
    if yaw <= -PI {
        yaw += 2.0 * PI;
    }
    Direction { pitch, yaw }
}

/// `Ry(yaw) · Rx(-pitch)`; maps `(0, 0, -1)` onto `direction_to_vector(d)`.
pub fn rotation_from_direction(d: Direction) -> Rotation3 {
    Rotation3::about_y(d.yaw) * Rotation3::about_x(-d.pitch)
}

pub fn rotation_between(src: Direction, dst: Direction) -> Rotation3 {
    rotation_between_with(src, dst, RotationConstruction::Composition)
}

pub fn rotation_between_with(
    src: Direction,
    dst: Direction,
    construction: RotationConstruction,
) -> Rotation3 {
    if src == dst {
        return Rotation3::identity();
    }
    match construction {
        RotationConstruction::Composition => {
            rotation_from_direction(dst) * rotation_from_direction(src).transpose()
        }
        RotationConstruction::Minimal => {
            minimal_rotation(&direction_to_vector(src), &direction_to_vector(dst))
        }
    }
}

fn minimal_rotation(a: &UnitVector3, b: &UnitVector3) -> Rotation3 {
    let cross = a.as_vector().cross(b.as_vector());
    let s = cross.norm();
    let c = a.dot(b);
    if s < 1e-15 {
        if c > 0.0 {
            return Rotation3::identity();
        }
        // Antipodal: any axis orthogonal to `a` works.
        let trial = if a.x().abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let axis = UnitVector3(a.as_vector().cross(&trial).normalize());
        return Rotation3::from_axis_angle(&axis, PI);
    }
    Rotation3::from_axis_angle(&UnitVector3(cross / s), s.atan2(c))
}

/// Angle between two unit vectors in radians, in `[0, π]`.
///
/// Evaluated as `atan2(‖a×b‖, a·b)`, which equals `acos(clamp(a·b, -1, 1))`
/// but keeps full precision for nearly parallel inputs.
pub fn angular_error(a: &UnitVector3, b: &UnitVector3) -> f64 {
    let cross = a.as_vector().cross(b.as_vector()).norm();
    let dot = a.dot(b).clamp(-1.0, 1.0);
    cross.atan2(dot)
}

/// Draws a direction uniformly from the Euclidean disk of `radius` around
/// `center` in `(pitch, yaw)` space: `r = radius·√u`, `θ = 2πu′`.
///
/// The resulting yaw is wrapped into `(-π, π]`; pitch is not clamped, so a
/// disk that crosses a pole can produce an invalid direction.
pub fn sample_disk_direction<R: Rng + ?Sized>(
    center: Direction,
    radius: f64,
    rng: &mut R,
) -> Direction {
    debug_assert!((0.0..=FRAC_PI_2 + 1e-12).contains(&radius));
    let u: f64 = rng.random();
    let u2: f64 = rng.random();
    let r = radius * u.sqrt();
    let theta = 2.0 * PI * u2;
    let (s, c) = theta.sin_cos();
    Direction {
        pitch: center.pitch + r * s,
        yaw: wrap_angle(center.yaw + r * c),
    }
}
