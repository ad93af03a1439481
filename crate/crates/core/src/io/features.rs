//! GZFT feature files.
//!
//! ```text
//! "GZFT" | version u32 = 1 | count u32 | dim u32 | count*dim f32 | [len u32 | JSON]
//! ```
//!
//! All integers and floats are little-endian, rows are stored contiguously.
//! The optional trailer is a JSON document describing the columns (used for
//! latent dumps).

use std::path::Path;

use crate::error::{Error, Position, Result};
use crate::metrics::FeatureSet;

pub const MAGIC: &[u8; 4] = b"GZFT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    count: usize,
    dim: usize,
    values: Vec<f32>,
    trailer: Option<String>,
}

impl FeatureFile {
    pub fn new(count: usize, dim: usize, values: Vec<f32>, trailer: Option<String>) -> Result<Self> {
        if count > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("feature file of {count}x{dim} exceeds u32 sizes")));
        }
        if count.checked_mul(dim) != Some(values.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {count} rows of dim {dim}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {i}")));
        }
        if let Some(t) = &trailer {
            serde_json::from_str::<serde_json::Value>(t)
                .map_err(|e| Error::InvalidArgument(format!("trailer is not JSON: {e}")))?;
        }
        Ok(Self {
            count,
            dim,
            values,
            trailer,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn trailer(&self) -> Option<&str> {
        self.trailer.as_deref()
    }

    /// Narrows to `f32`; values that overflow `f32` are rejected.
    pub fn from_feature_set(set: &FeatureSet) -> Result<Self> {
        let mut values = Vec::with_capacity(set.len() * set.dim());
        for (i, row) in set.rows().iter().enumerate() {
            for &v in row {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::NonFinite(format!("row {i} does not fit in f32")));
                }
                values.push(f);
            }
        }
        Self::new(set.len(), set.dim(), values, None)
    }

    pub fn to_feature_set(&self) -> Result<FeatureSet> {
        let rows = (0..self.count)
            .map(|i| self.row(i).iter().map(|&v| f64::from(v)).collect())
            .collect();
        FeatureSet::new(self.dim, rows)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let trailer_len = self.trailer.as_ref().map_or(0, |t| 4 + t.len());
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len() + trailer_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(t) = &self.trailer {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            out.extend_from_slice(t.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let err = |at: usize, msg: String| Error::parse(name, Position::Byte(at), msg);
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));

        if bytes.len() < HEADER_LEN {
            return Err(err(
                bytes.len(),
                format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
            ));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(0, "missing GZFT magic".into()));
        }
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let count = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        let payload = (count as u128) * (dim as u128) * 4;
        let available = (bytes.len() - HEADER_LEN) as u128;
        if available < payload {
            return Err(err(
                bytes.len(),
                format!("payload of {count}x{dim} needs {payload} bytes, found {available}"),
            ));
        }
        let payload = payload as usize;
        let mut values = Vec::with_capacity(count * dim);
        for (k, chunk) in bytes[HEADER_LEN..HEADER_LEN + payload].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(err(HEADER_LEN + 4 * k, format!("non-finite value at row {}", k / dim.max(1))));
            }
            values.push(v);
        }

        let mut at = HEADER_LEN + payload;
        let trailer = if at == bytes.len() {
            None
        } else {
            if bytes.len() - at < 4 {
                return Err(err(at, format!("trailer length needs 4 bytes, found {}", bytes.len() - at)));
            }
            let len = u32_at(at) as usize;
            at += 4;
            if bytes.len() - at != len {
                return Err(err(
                    at,
                    format!("trailer declares {len} bytes, found {}", bytes.len() - at),
                ));
            }
            let text = std::str::from_utf8(&bytes[at..]).map_err(|e| err(at + e.valid_up_to(), "trailer is not UTF-8".into()))?;
            serde_json::from_str::<serde_json::Value>(text).map_err(|e| err(at, format!("trailer is not JSON: {e}")))?;
            Some(text.to_owned())
        };
        Ok(Self {
            count,
            dim,
            values,
            trailer,
        })
    }
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureFile::from_bytes(&bytes, &path.display().to_string())
}

pub fn write_features(path: &Path, file: &FeatureFile) -> Result<()> {
    super::write_bytes(path, &file.to_bytes())
}

/// Reads a feature file straight into a [`FeatureSet`].
pub fn read_feature_set(path: &Path) -> Result<FeatureSet> {
    read_features(path)?.to_feature_set()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_set_is_sixteen_bytes() {
        let f = FeatureFile::new(0, 8, vec![], None).unwrap();
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 16);
        assert_eq!(FeatureFile::from_bytes(&bytes, "e").unwrap(), f);
    }

    #[test]
    fn layout_is_little_endian() {
        let f = FeatureFile::new(1, 2, vec![1.0, -2.5], None).unwrap();
        let b = f.to_bytes();
        assert_eq!(&b[..4], b"GZFT");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..16], &[2, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&b[20..24], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let f = FeatureFile::new(2, 3, vec![0.5; 6], None).unwrap();
        let b = f.to_bytes();
        let err = FeatureFile::from_bytes(&b[..b.len() - 5], "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("24") && msg.contains("19"), "{msg}");
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut b = FeatureFile::new(0, 1, vec![], None).unwrap().to_bytes();
        b[4] = 2;
        assert!(matches!(
            FeatureFile::from_bytes(&b, "v"),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        b[0] = b'X';
        assert!(matches!(FeatureFile::from_bytes(&b, "v"), Err(Error::Parse { .. })));
    }

    #[test]
    fn non_finite_payload_reports_offset() {
        let mut b = FeatureFile::new(1, 2, vec![1.0, 2.0], None).unwrap().to_bytes();
        b[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        match FeatureFile::from_bytes(&b, "n").unwrap_err() {
            Error::Parse { position, .. } => assert_eq!(position, Position::Byte(20)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailer_round_trips() {
        let f = FeatureFile::new(1, 1, vec![3.0], Some("{\"kind\":\"latent\"}".into())).unwrap();
        let b = f.to_bytes();
        assert_eq!(FeatureFile::from_bytes(&b, "t").unwrap(), f);
        let mut short = b.clone();
        short.pop();
        assert!(FeatureFile::from_bytes(&short, "t").is_err());
    }

    #[test]
    fn feature_set_conversion() {
        let set = FeatureSet::new(2, vec![vec![0.25, -1.0], vec![3.0, 4.5]]).unwrap();
        let f = FeatureFile::from_feature_set(&set).unwrap();
        assert_eq!(f.to_feature_set().unwrap(), set);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(count in 0usize..6, dim in 0usize..6, seed in any::<u64>()) {
            let values: Vec<f32> = (0..count * dim).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 10_000) as f32) / 7.0 - 500.0).collect();
            let f = FeatureFile::new(count, dim, values, None).unwrap();
            let b = f.to_bytes();
            let back = FeatureFile::from_bytes(&b, "p").unwrap();
            prop_assert_eq!(back.to_bytes(), b);
            prop_assert_eq!(back, f);
        }

        #[test]
        fn fuzzed_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = FeatureFile::from_bytes(&bytes, "fuzz");
            let mut prefixed = b"GZFT\x01\0\0\0".to_vec();
            prefixed.extend_from_slice(&bytes);
            let _ = FeatureFile::from_bytes(&prefixed, "fuzz");
        }
    }
}
