//! Readers and writers for every on-disk artifact.
//!
//! All writers are deterministic. Floats in text formats are written with
//! 17 significant digits so they re-parse to the same bit pattern.

pub mod config;
pub mod features;
pub mod image;
pub mod latent;
pub mod manifest;
pub mod mesh;

use std::path::Path;

use crate::error::{Error, Result};

/// `v` with 17 significant digits in exponent notation, e.g. `3.1415926535897931e0`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
