//! Latent-space redirection: factor embeddings rotated by the transform
//! between a source and a target condition, plus the pluggable
//! encoder / decoder / estimator / redirector interfaces.
//!
//! The shipped implementations are stubs for exercising pipelines without
//! trained networks. Oracle stubs pass ground-truth labels through a
//! sidecar on the [`Frame`]; real models ignore it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;

use nalgebra::Vector3;

use crate::augment::ManifestEntry;
use crate::error::{Error, Result};
use crate::geometry::{direction_to_vector, rotation_between, Direction, Rotation3};
use crate::raster::ImageBuffer;

pub const HEAD: &str = "head";
pub const GAZE: &str = "gaze";
pub const DEFAULT_EMBEDDING_ROWS: usize = 16;

/// `n` 3-vectors encoding one controllable factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorEmbedding {
    rows: Vec<Vector3<f64>>,
}

impl FactorEmbedding {
    pub fn new(rows: Vec<Vector3<f64>>) -> Result<Self> {
        if rows.iter().any(|r| !r.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("factor embedding".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vector3<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt()
    }

    fn rotated(&self, r: &Rotation3) -> Self {
        Self {
            rows: self.rows.iter().map(|v| r.apply(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub embedding: FactorEmbedding,
    /// Pseudo-condition the embedding currently encodes.
    pub condition: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// Opaque identity code.
    pub id_code: Vec<f64>,
    pub factors: BTreeMap<String, Factor>,
}

impl LatentState {
    pub fn new(id_code: Vec<f64>, factors: BTreeMap<String, Factor>) -> Result<Self> {
        for required in [HEAD, GAZE] {
            if !factors.contains_key(required) {
                return Err(Error::MissingFactor(required.into()));
            }
        }
        Ok(Self { id_code, factors })
    }

    pub fn factor(&self, name: &str) -> Result<&Factor> {
        self.factors.get(name).ok_or_else(|| Error::MissingFactor(name.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RedirectPattern {
    /// Head rotation applied to head and gaze embeddings.
    Both,
    /// Gaze rotation applied to the gaze embedding; head fixed.
    GazeOnly,
    /// Head rotation applied to the head embedding; gaze fixed.
    HeadOnly,
}

impl RedirectPattern {
    pub const ALL: [RedirectPattern; 3] = [RedirectPattern::Both, RedirectPattern::GazeOnly, RedirectPattern::HeadOnly];

    pub fn name(self) -> &'static str {
        match self {
            RedirectPattern::Both => "both",
            RedirectPattern::GazeOnly => "gaze-only",
            RedirectPattern::HeadOnly => "head-only",
        }
    }
}

impl std::str::FromStr for RedirectPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(RedirectPattern::Both),
            "gaze-only" | "gaze" => Ok(RedirectPattern::GazeOnly),
            "head-only" | "head" => Ok(RedirectPattern::HeadOnly),
            other => Err(Error::InvalidArgument(format!("unknown redirect pattern '{other}'"))),
        }
    }
}

impl std::fmt::Display for RedirectPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `T(z, c_src, c_tgt)`: every row rotated by `rotation_between(c_src, c_tgt)`.
pub fn transform_embedding(z: &FactorEmbedding, c_src: Direction, c_tgt: Direction) -> FactorEmbedding {
    z.rotated(&rotation_between(c_src, c_tgt))
}

fn rotate_factor(factor: &Factor, r: &Rotation3) -> Factor {
    Factor {
        embedding: factor.embedding.rotated(r),
        condition: r.rotate(&direction_to_vector(factor.condition)).to_direction(),
    }
}

/// Applies one redirection pattern. Conditions are rotated by the same
/// matrix as their embeddings; factors the pattern does not touch are
/// copied unchanged.
pub fn redirect(
    state: &LatentState,
    pattern: RedirectPattern,
    target_head: Option<Direction>,
    target_gaze: Option<Direction>,
) -> Result<LatentState> {
    let mut out = state.clone();
    match pattern {
        RedirectPattern::Both | RedirectPattern::HeadOnly => {
            let target = target_head.ok_or(Error::MissingTarget(HEAD))?;
            let head = state.factor(HEAD)?;
            if head.condition == target {
                return Ok(out);
            }
            let r = rotation_between(head.condition, target);
            out.factors.insert(HEAD.into(), rotate_factor(head, &r));
            if pattern == RedirectPattern::Both {
                let gaze = state.factor(GAZE)?;
                out.factors.insert(GAZE.into(), rotate_factor(gaze, &r));
            }
        }
        RedirectPattern::GazeOnly => {
            let target = target_gaze.ok_or(Error::MissingTarget(GAZE))?;
            let gaze = state.factor(GAZE)?;
            if gaze.condition == target {
                return Ok(out);
            }
            let r = rotation_between(gaze.condition, target);
            out.factors.insert(GAZE.into(), rotate_factor(gaze, &r));
        }
    }
    Ok(out)
}

/// Head and gaze labels of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labels {
    pub head: Direction,
    pub gaze: Direction,
}

/// An image moving through the pipeline, optionally carrying ground-truth
/// labels for oracle stubs.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: ImageBuffer,
    pub sidecar: Option<Labels>,
}

impl Frame {
    pub fn new(image: ImageBuffer) -> Self {
        Self { image, sidecar: None }
    }

    pub fn labeled(image: ImageBuffer, labels: Labels) -> Self {
        Self {
            image,
            sidecar: Some(labels),
        }
    }
}

pub trait Encoder: Sync {
    fn encode(&self, frame: &Frame) -> Result<LatentState>;
}

pub trait Decoder: Sync {
    fn decode(&self, state: &LatentState) -> Result<Frame>;
}

pub trait Estimator: Sync {
    fn estimate(&self, frame: &Frame) -> Result<Labels>;
}

/// One redirection job. `pattern = None` rotates each factor to its own target.
#[derive(Debug, Clone, Copy)]
pub struct RedirectRequest<'a> {
    pub entry: &'a ManifestEntry,
    pub source: &'a Frame,
    pub pattern: Option<RedirectPattern>,
    pub source_labels: Labels,
    pub target: Labels,
}

pub trait Redirector: Sync {
    fn redirect(&self, request: &RedirectRequest<'_>) -> Result<Frame>;
}

/// Encodes pixels into the identity code and the sidecar labels into
/// head/gaze factors whose `k`-th row is `(k + 1) · v(condition)`.
#[derive(Debug, Clone, Copy)]
pub struct OracleEncoder {
    pub rows: usize,
}

impl Default for OracleEncoder {
    fn default() -> Self {
        Self {
            rows: DEFAULT_EMBEDDING_ROWS,
        }
    }
}

impl Encoder for OracleEncoder {
    fn encode(&self, frame: &Frame) -> Result<LatentState> {
        let labels = frame
            .sidecar
            .ok_or_else(|| Error::Interface("oracle encoder needs sidecar labels".into()))?;
        let mut id_code = Vec::with_capacity(frame.image.data().len() + 2);
        id_code.push(frame.image.width() as f64);
        id_code.push(frame.image.height() as f64);
        id_code.extend_from_slice(frame.image.data());
        let factor = |d: Direction| Factor {
            embedding: FactorEmbedding {
                rows: (0..self.rows.max(1))
                    .map(|k| direction_to_vector(d).into_vector() * (k + 1) as f64)
                    .collect(),
            },
            condition: d,
        };
        let mut factors = BTreeMap::new();
        factors.insert(HEAD.to_string(), factor(labels.head));
        factors.insert(GAZE.to_string(), factor(labels.gaze));
        LatentState::new(id_code, factors)
    }
}

/// Inverse of [`OracleEncoder`]: pixels from the identity code, sidecar
/// labels from the factor conditions.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDecoder;

impl Decoder for OracleDecoder {
    fn decode(&self, state: &LatentState) -> Result<Frame> {
        if state.id_code.len() < 2 {
            return Err(Error::Interface("identity code too short for oracle decoder".into()));
        }
        let w = state.id_code[0] as usize;
        let h = state.id_code[1] as usize;
        let image = ImageBuffer::from_raw(w, h, state.id_code[2..].to_vec())?;
        Ok(Frame::labeled(
            image,
            Labels {
                head: state.factor(HEAD)?.condition,
                gaze: state.factor(GAZE)?.condition,
            },
        ))
    }
}

/// Returns the sidecar labels unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEstimator;

impl Estimator for OracleEstimator {
    fn estimate(&self, frame: &Frame) -> Result<Labels> {
        frame
            .sidecar
            .ok_or_else(|| Error::Interface("oracle estimator needs sidecar labels".into()))
    }
}

/// Returns the source frame untouched; a no-op baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRedirector;

impl Redirector for IdentityRedirector {
    fn redirect(&self, request: &RedirectRequest<'_>) -> Result<Frame> {
        Ok(Frame {
            image: request.source.image.clone(),
            sidecar: Some(request.source_labels),
        })
    }
}

/// Encoder → latent redirection → decoder.
#[derive(Debug, Clone, Copy)]
pub struct LatentRedirector<E, D> {
    pub encoder: E,
    pub decoder: D,
}

impl<E: Encoder, D: Decoder> Redirector for LatentRedirector<E, D> {
    fn redirect(&self, request: &RedirectRequest<'_>) -> Result<Frame> {
        let mut source = request.source.clone();
        if source.sidecar.is_none() {
            source.sidecar = Some(request.source_labels);
        }
        let state = self.encoder.encode(&source)?;
        let t = request.target;
        let redirected = match request.pattern {
            Some(p) => redirect(&state, p, Some(t.head), Some(t.gaze))?,
            None => {
                let s = redirect(&state, RedirectPattern::HeadOnly, Some(t.head), None)?;
                redirect(&s, RedirectPattern::GazeOnly, None, Some(t.gaze))?
            }
        };
        self.decoder.decode(&redirected)
    }
}

/// Runs an external estimator per frame.
///
/// Arguments may contain `{image}` (PNG written for the frame) and `{out}`
/// (path where the command must write one manifest row whose head/gaze
/// fields carry the estimate).
#[derive(Debug, Clone)]
pub struct CommandEstimator {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandEstimator {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl Estimator for CommandEstimator {
    fn estimate(&self, frame: &Frame) -> Result<Labels> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let image_path: PathBuf = dir.path().join("frame.png");
        let out_path: PathBuf = dir.path().join("estimate.jsonl");
        crate::io::image::write_png(&image_path, &frame.image)?;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{image}", &image_path.to_string_lossy())
                    .replace("{out}", &out_path.to_string_lossy())
            })
            .collect();
        let status = Command::new(&self.program)
            .args(&args)
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        if !status.success() {
            return Err(Error::Interface(format!("estimator command exited with {status}")));
        }
        let rows = crate::io::manifest::read_manifest(&out_path)?;
        let row = rows
            .first()
            .ok_or_else(|| Error::Interface("estimator wrote no rows".into()))?;
        Ok(Labels {
            head: row.head,
            gaze: row.gaze,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::direction_to_vector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut impl Rng) -> Direction {
        Direction::new(rng.random_range(-1.0..1.0), rng.random_range(-1.5..1.5))
    }

    fn random_embedding(rng: &mut impl Rng, n: usize) -> FactorEmbedding {
        FactorEmbedding::new(
            (0..n)
                .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect(),
        )
        .unwrap()
    }

    fn state(rng: &mut impl Rng) -> LatentState {
        let mut factors = BTreeMap::new();
        for name in [HEAD, GAZE] {
            let c = random_dir(rng);
            let mut emb = random_embedding(rng, 16);
            emb.rows[0] = direction_to_vector(c).into_vector();
            factors.insert(name.to_string(), Factor { embedding: emb, condition: c });
        }
        LatentState::new(vec![1.0, 2.0, 3.0], factors).unwrap()
    }

    #[test]
    fn transform_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let z = random_embedding(&mut rng, 16);
        let c = random_dir(&mut rng);
        assert_eq!(transform_embedding(&z, c, c), z);
    }

    #[test]
    fn transform_group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..500 {
            let z = random_embedding(&mut rng, 16);
            let (a, b, c) = (random_dir(&mut rng), random_dir(&mut rng), random_dir(&mut rng));
            let two_step = transform_embedding(&transform_embedding(&z, a, b), b, c);
            let direct = transform_embedding(&z, a, c);
            let back = transform_embedding(&transform_embedding(&z, a, b), b, a);
            for i in 0..16 {
                assert!((two_step.rows[i] - direct.rows[i]).amax() < 1e-12);
                assert!((back.rows[i] - z.rows[i]).amax() < 1e-12);
                assert!((direct.rows[i].norm() - z.rows[i].norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn both_to_current_head_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let s = state(&mut rng);
        let head = s.factor(HEAD).unwrap().condition;
        assert_eq!(redirect(&s, RedirectPattern::Both, Some(head), None).unwrap(), s);
    }

    #[test]
    fn gaze_only_leaves_head_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let s = state(&mut rng);
        let out = redirect(&s, RedirectPattern::GazeOnly, None, Some(random_dir(&mut rng))).unwrap();
        assert_eq!(out.factors[HEAD], s.factors[HEAD]);
        assert_eq!(out.id_code, s.id_code);
        assert_ne!(out.factors[GAZE], s.factors[GAZE]);
        let out = redirect(&s, RedirectPattern::HeadOnly, Some(random_dir(&mut rng)), None).unwrap();
        assert_eq!(out.factors[GAZE], s.factors[GAZE]);
    }

    #[test]
    fn both_keeps_conditions_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..100 {
            let s = state(&mut rng);
            let target = random_dir(&mut rng);
            let out = redirect(&s, RedirectPattern::Both, Some(target), None).unwrap();
            let r = rotation_between(s.factors[HEAD].condition, target);
            let g = &out.factors[GAZE];
            let expected = r.apply(direction_to_vector(s.factors[GAZE].condition).as_vector());
            assert!((g.embedding.rows[0] - expected).amax() < 1e-12);
            assert!((direction_to_vector(g.condition).into_vector() - expected).amax() < 1e-12);
            let h = &out.factors[HEAD];
            assert!((h.embedding.rows[0] - target.vector().into_vector()).amax() < 1e-12);
        }
    }

    #[test]
    fn missing_targets_and_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let s = state(&mut rng);
        assert!(matches!(redirect(&s, RedirectPattern::Both, None, None), Err(Error::MissingTarget(HEAD))));
        assert!(matches!(redirect(&s, RedirectPattern::GazeOnly, Some(Direction::FRONTAL), None), Err(Error::MissingTarget(GAZE))));
        assert!(matches!(LatentState::new(vec![], BTreeMap::new()), Err(Error::MissingFactor(_))));
    }

    #[test]
    fn oracle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let image = ImageBuffer::from_fn(5, 4, |_, _| [rng.random(), rng.random(), rng.random()]);
        let labels = Labels {
            head: Direction::new(0.1, 0.2),
            gaze: Direction::new(-0.1, 0.3),
        };
        let frame = Frame::labeled(image, labels);
        let state = OracleEncoder::default().encode(&frame).unwrap();
        assert_eq!(state.factors[HEAD].embedding.len(), DEFAULT_EMBEDDING_ROWS);
        let back = OracleDecoder.decode(&state).unwrap();
        assert_eq!(back, frame);
        assert_eq!(OracleEstimator.estimate(&back).unwrap(), labels);
        assert!(OracleEstimator.estimate(&Frame::new(ImageBuffer::new(1, 1))).is_err());
    }

    #[test]
    fn pattern_parsing() {
        for p in RedirectPattern::ALL {
            assert_eq!(p.name().parse::<RedirectPattern>().unwrap(), p);
        }
        assert!("sideways".parse::<RedirectPattern>().is_err());
    }
}
