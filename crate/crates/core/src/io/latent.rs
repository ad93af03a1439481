//! Latent dumps: one GZFT row per [`LatentState`] with a JSON trailer
//! describing the column layout.
//!
//! Row layout: the identity code, then for each factor in name order its
//! condition pitch and yaw followed by `3 * rows` embedding values.
//! Values are stored as `f32`, so replaying a dump is exact only up to that
//! precision.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Direction;
use crate::io::features::{read_features, write_features, FeatureFile};
use crate::redirect::{Factor, FactorEmbedding, LatentState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorLayout {
    pub name: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentLayout {
    pub kind: String,
    pub id_dim: usize,
    pub factors: Vec<FactorLayout>,
}

impl LatentLayout {
    pub fn of(state: &LatentState) -> Self {
        Self {
            kind: "latent".into(),
            id_dim: state.id_code.len(),
            factors: state
                .factors
                .iter()
                .map(|(name, f)| FactorLayout {
                    name: name.clone(),
                    rows: f.embedding.len(),
                })
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.id_dim + self.factors.iter().map(|f| 2 + 3 * f.rows).sum::<usize>()
    }
}

pub fn latents_to_file(states: &[LatentState]) -> Result<FeatureFile> {
    let Some(first) = states.first() else {
        return Err(Error::EmptyRun);
    };
    let layout = LatentLayout::of(first);
    let mut values = Vec::with_capacity(states.len() * layout.width());
    for (i, s) in states.iter().enumerate() {
        if LatentLayout::of(s) != layout {
            return Err(Error::DimensionMismatch(format!("latent {i} has a different layout than latent 0")));
        }
        values.extend(s.id_code.iter().map(|&v| v as f32));
        for f in s.factors.values() {
            values.push(f.condition.pitch as f32);
            values.push(f.condition.yaw as f32);
            for r in f.embedding.rows() {
                values.extend(r.iter().map(|&v| v as f32));
            }
        }
    }
    let trailer = serde_json::to_string(&layout).expect("layout serializes");
    FeatureFile::new(states.len(), layout.width(), values, Some(trailer))
}

pub fn latents_from_file(file: &FeatureFile) -> Result<Vec<LatentState>> {
    let trailer = file
        .trailer()
        .ok_or_else(|| Error::Interface("feature file has no latent layout trailer".into()))?;
    let layout: LatentLayout =
        serde_json::from_str(trailer).map_err(|e| Error::Interface(format!("bad latent layout: {e}")))?;
    if layout.kind != "latent" {
        return Err(Error::Interface(format!("trailer kind is '{}', expected 'latent'", layout.kind)));
    }
    if layout.width() != file.dim() {
        return Err(Error::DimensionMismatch(format!(
            "layout needs {} columns, file has {}",
            layout.width(),
            file.dim()
        )));
    }
    (0..file.count())
        .map(|i| {
            let row: Vec<f64> = file.row(i).iter().map(|&v| f64::from(v)).collect();
            let (id, mut rest) = row.split_at(layout.id_dim);
            let mut factors = BTreeMap::new();
            for fl in &layout.factors {
                let (head, tail) = rest.split_at(2 + 3 * fl.rows);
                rest = tail;
                let rows = head[2..].chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
                factors.insert(
                    fl.name.clone(),
                    Factor {
                        embedding: FactorEmbedding::new(rows)?,
                        condition: Direction::new(head[0], head[1]),
                    },
                );
            }
            LatentState::new(id.to_vec(), factors)
        })
        .collect()
}

pub fn write_latents(path: &Path, states: &[LatentState]) -> Result<()> {
    write_features(path, &latents_to_file(states)?)
}

pub fn read_latents(path: &Path) -> Result<Vec<LatentState>> {
    latents_from_file(&read_features(path)?)
}
