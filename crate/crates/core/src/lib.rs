//! Rotation-based face augmentation for gaze and head redirection.
//!
//! Faces are carried as textured meshes whose head and gaze labels rotate
//! with them, so augmented samples have exact labels. Around that sit camera
//! normalization, a software rasterizer, the latent embedding transform used
//! by redirection models, image and feature metrics, and two evaluation
//! protocols. Neural components are interfaces with oracle stand-ins.

// `!(x > 0.0)` is how NaN gets rejected alongside the range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod camnorm;
pub mod cli;
pub mod error;
pub mod evalharness;
pub mod facemesh;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod raster;
pub mod redirect;

pub use error::{Error, Result};
pub use geometry::{Direction, Rotation3, UnitVector3};
