//! Scalar measures: image similarity, losses, feature-distribution distance
//! and redirection error.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{angular_error, Direction};
use crate::raster::ImageBuffer;

/// Per-scale weights of the five-scale MS-SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Eigenvalue floor below which covariances get shrunk.
const COVARIANCE_FLOOR: f64 = 1e-10;
const COVARIANCE_SHRINKAGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda_id: f64,
    pub lambda_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.84,
            lambda_id: 2.0,
            lambda_rec: 200.0,
        }
    }
}

/// Rows of equal dimension produced by an external feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} values, expected {dim}",
                rows[i].len()
            )));
        }
        if let Some(i) = rows.iter().position(|r| !r.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite(format!("feature row {i}")));
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimConfig {
    /// Number of scales; `None` uses as many of the five as the image allows.
    pub scales: Option<usize>,
    pub weights: Vec<f64>,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        Self {
            scales: None,
            weights: MS_SSIM_WEIGHTS.to_vec(),
        }
    }
}

impl MsSsimConfig {
    pub fn single_scale() -> Self {
        Self {
            scales: Some(1),
            weights: vec![1.0],
        }
    }
}

/// Largest scale count (up to `max`) with `min_side >= 11 · 2^(scales - 1)`.
pub fn supported_scales(min_side: usize, max: usize) -> usize {
    let mut scales = 0;
    while scales < max && min_side >= SSIM_WINDOW << scales {
        scales += 1;
    }
    scales
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

// 'valid' separable filtering of a w×h plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * row[x + i];
            }
            tmp[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    (out, ow, oh)
}

/// Mean SSIM and mean contrast-structure term of two gray planes.
fn ssim_terms(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, f64) {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, ow, oh) = filter_valid(a, w, h, &k);
    let (mu_b, _, _) = filter_valid(b, w, h, &k);
    let (e_aa, _, _) = filter_valid(&aa, w, h, &k);
    let (e_bb, _, _) = filter_valid(&bb, w, h, &k);
    let (e_ab, _, _) = filter_valid(&ab, w, h, &k);
    let n = (ow * oh) as f64;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    (ssim_sum / n, cs_sum / n)
}

fn downsample(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) / 4.0;
        }
    }
    (out, ow, oh)
}

pub fn ms_ssim(x: &ImageBuffer, y: &ImageBuffer) -> Result<f64> {
    ms_ssim_with(x, y, &MsSsimConfig::default())
}

/// Multi-scale SSIM on channel-mean grayscale.
///
/// Contrast-structure terms of every scale but the last are combined with
/// the full SSIM of the coarsest scale, each raised to its weight. When the
/// image is too small for all configured scales, the leading weights are
/// kept and renormalized to sum to 1. Negative per-scale terms are clamped
/// to 0 so the result stays in `[0, 1]`.
pub fn ms_ssim_with(x: &ImageBuffer, y: &ImageBuffer, cfg: &MsSsimConfig) -> Result<f64> {
    if !x.same_size(y) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    let (w, h) = (x.width(), x.height());
    let min_side = w.min(h);
    if min_side < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: SSIM_WINDOW,
        });
    }
    let available = supported_scales(min_side, cfg.weights.len());
    let scales = match cfg.scales {
        Some(s) if s == 0 || s > cfg.weights.len() => {
            return Err(Error::InvalidArgument(format!("{s} scales with {} weights", cfg.weights.len())))
        }
        Some(s) if s > available => {
            return Err(Error::TooSmall {
                width: w,
                height: h,
                min: SSIM_WINDOW << (s - 1),
            })
        }
        Some(s) => s,
        None => available,
    };
    let total: f64 = cfg.weights[..scales].iter().sum();
    let weights: Vec<f64> = cfg.weights[..scales].iter().map(|v| v / total).collect();

    let mut a = x.to_gray();
    let mut b = y.to_gray();
    let (mut cw, mut ch) = (w, h);
    let mut value = 1.0;
    for (s, weight) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&a, &b, cw, ch);
        if s + 1 == scales {
            value *= ssim.max(0.0).powf(*weight);
        } else {
            value *= cs.max(0.0).powf(*weight);
            let (na, nw, nh) = downsample(&a, cw, ch);
            let (nb, _, _) = downsample(&b, cw, ch);
            a = na;
            b = nb;
            cw = nw;
            ch = nh;
        }
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Mean absolute difference over all pixels and channels.
pub fn l1(x: &ImageBuffer, y: &ImageBuffer) -> Result<f64> {
    if !x.same_size(y) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    let n = x.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / n as f64)
}

/// `α (1 − MS-SSIM(x, y)) + (1 − α) |x − y|₁`.
pub fn mixed_rec_loss(x: &ImageBuffer, y: &ImageBuffer, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let ssim = ms_ssim(x, y)?;
    let l = l1(x, y)?;
    Ok(alpha * (1.0 - ssim) + (1.0 - alpha) * l)
}

/// Cosine similarity of two feature vectors.
pub fn identity_similarity(f1: &[f64], f2: &[f64]) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", f1.len(), f2.len())));
    }
    let n1 = f1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = f2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = f1.iter().zip(f2).map(|(a, b)| a * b).sum();
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

pub fn identity_loss(f1: &[f64], f2: &[f64]) -> Result<f64> {
    Ok(1.0 - identity_similarity(f1, f2)?)
}

/// `l_sted + λ_id · l_id + λ_rec · l_rec`; `l_sted` is supplied by the caller.
pub fn total_loss(l_sted: f64, l_id: f64, l_rec: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("l_sted", l_sted),
        ("l_id", l_id),
        ("l_rec", l_rec),
        ("lambda_id", w.lambda_id),
        ("lambda_rec", w.lambda_rec),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    Ok(l_sted + w.lambda_id * l_id + w.lambda_rec * l_rec)
}

/// Sample mean and unbiased (`1/(N−1)`) covariance.
pub fn mean_and_covariance(set: &FeatureSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = set.len();
    if n < 2 {
        return Err(Error::TooFewRows { rows: n, min: 2 });
    }
    let d = set.dim();
    let mut mean = DVector::zeros(d);
    for row in set.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;

    // Accumulate XᵀX over row chunks to bound memory for large sets. Both
    // operands are materialized so the product runs on the blocked kernel.
    const CHUNK: usize = 2048;
    let mut cov = DMatrix::zeros(d, d);
    for chunk in set.rows().chunks(CHUNK) {
        let centered_t = DMatrix::from_fn(d, chunk.len(), |j, i| chunk[i][j] - mean[j]);
        let centered = centered_t.transpose();
        cov.gemm(1.0, &centered_t, &centered, 1.0);
    }
    cov /= (n - 1) as f64;
    // Symmetrize away rounding asymmetry from the blocked products.
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`.
///
/// If either covariance has an eigenvalue below 1e-10, `1e-6 · I` is added
/// to both. One-dimensional inputs use the closed form
/// `(μa − μb)² + (σa − σb)²`.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.dim(), b.dim())));
    }
    let (mu_a, mut cov_a) = mean_and_covariance(a)?;
    let (mu_b, mut cov_b) = mean_and_covariance(b)?;
    let mean_term = (&mu_a - &mu_b).norm_squared();
    if a.dim() == 1 {
        let diff = cov_a[(0, 0)].sqrt() - cov_b[(0, 0)].sqrt();
        return Ok(mean_term + diff * diff);
    }
    if min_eigenvalue(&cov_a) < COVARIANCE_FLOOR || min_eigenvalue(&cov_b) < COVARIANCE_FLOOR {
        for i in 0..a.dim() {
            cov_a[(i, i)] += COVARIANCE_SHRINKAGE;
            cov_b[(i, i)] += COVARIANCE_SHRINKAGE;
        }
    }
    let sqrt_a = psd_sqrt(&cov_a);
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(&inner).trace();
    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

/// Angle between target and estimate, in degrees.
pub fn redirection_error(target: Direction, estimated: Direction) -> f64 {
    angular_error(&target.vector(), &estimated.vector()).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn scale_count_for_common_sizes() {
        assert_eq!(supported_scales(128, 5), 4);
        assert_eq!(supported_scales(176, 5), 5);
        assert_eq!(supported_scales(32, 5), 2);
        assert_eq!(supported_scales(11, 5), 1);
        assert_eq!(supported_scales(10, 5), 0);
    }

    #[test]
    fn ms_ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_image(&mut rng, 64, 48);
        let y = random_image(&mut rng, 64, 48);
        assert!((ms_ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        let xy = ms_ssim(&x, &y).unwrap();
        let yx = ms_ssim(&y, &x).unwrap();
        assert!((xy - yx).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&xy));
        assert!(xy < 1.0);
    }

    #[test]
    fn ms_ssim_errors() {
        let a = ImageBuffer::new(16, 16);
        assert!(matches!(ms_ssim(&a, &ImageBuffer::new(16, 15)), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            ms_ssim(&ImageBuffer::new(10, 30), &ImageBuffer::new(10, 30)),
            Err(Error::TooSmall { .. })
        ));
        let cfg = MsSsimConfig {
            scales: Some(3),
            ..Default::default()
        };
        assert!(matches!(ms_ssim_with(&a, &a, &cfg), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn l1_cases() {
        let zeros = ImageBuffer::new(4, 4);
        let ones = ImageBuffer::filled(4, 4, [1.0; 3]);
        assert_eq!(l1(&zeros, &zeros).unwrap(), 0.0);
        assert_eq!(l1(&zeros, &ones).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = random_image(&mut rng, 8, 8);
        let shifted = ImageBuffer::from_raw(8, 8, x.data().iter().map(|v| v + 0.5).collect()).unwrap();
        assert!((l1(&x, &shifted).unwrap() - 0.5).abs() < 1e-15);
        assert!(l1(&x, &zeros).is_err());
    }

    #[test]
    fn mixed_loss_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = random_image(&mut rng, 32, 32);
        let y = random_image(&mut rng, 32, 32);
        assert_eq!(mixed_rec_loss(&x, &x, 0.84).unwrap(), 0.0);
        assert_eq!(mixed_rec_loss(&x, &y, 0.0).unwrap(), l1(&x, &y).unwrap());
        assert_eq!(mixed_rec_loss(&x, &y, 1.0).unwrap(), 1.0 - ms_ssim(&x, &y).unwrap());
        let combined = 0.84 * (1.0 - ms_ssim(&x, &y).unwrap()) + 0.16 * l1(&x, &y).unwrap();
        assert!((mixed_rec_loss(&x, &y, 0.84).unwrap() - combined).abs() < 1e-15);
        assert!(mixed_rec_loss(&x, &y, 1.5).is_err());
    }

    #[test]
    fn similarity_cases() {
        let f = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert!((identity_similarity(&f, &f).unwrap() - 1.0).abs() < 1e-15);
        assert!(identity_loss(&f, &f).unwrap().abs() < 1e-15);
        assert!((identity_similarity(&f, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((identity_loss(&f, &neg).unwrap() - 2.0).abs() < 1e-15);
        let g = [1.0, 0.5, -0.25];
        let f3: Vec<f64> = f.iter().map(|v| 3.0 * v).collect();
        assert!((identity_similarity(&f3, &g).unwrap() - identity_similarity(&f, &g).unwrap()).abs() < 1e-12);
        assert!(matches!(identity_similarity(&[0.0; 3], &g), Err(Error::ZeroVector)));
    }

    #[test]
    fn total_loss_cases() {
        let w = LossWeights::default();
        assert_eq!(total_loss(1.0, 0.0, 0.0, &w).unwrap(), 1.0);
        assert_eq!(total_loss(0.0, 1.0, 0.0, &w).unwrap(), 2.0);
        assert_eq!(total_loss(0.0, 0.0, 0.01, &w).unwrap(), 2.0);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0, &w), Err(Error::NonFinite(_))));
    }

    #[test]
    fn total_loss_is_linear() {
        let w = LossWeights::default();
        let base = total_loss(0.3, 0.2, 0.1, &w).unwrap();
        let h = 0.5;
        assert_eq!(total_loss(0.3 + h, 0.2, 0.1, &w).unwrap() - base, h);
        assert_eq!(total_loss(0.3, 0.2 + h, 0.1, &w).unwrap() - base, w.lambda_id * h);
        assert_eq!(total_loss(0.3, 0.2, 0.1 + h, &w).unwrap() - base, w.lambda_rec * h);
    }

    fn set(rows: Vec<Vec<f64>>) -> FeatureSet {
        let d = rows[0].len();
        FeatureSet::new(d, rows).unwrap()
    }

    #[test]
    fn fid_one_dimensional_closed_form() {
        let a = set(vec![vec![-1.0], vec![1.0]]);
        let b = set(vec![vec![0.0], vec![2.0]]);
        assert_eq!(fid(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn fid_identical_sets_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let rows_a: Vec<Vec<f64>> = (0..200).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let rows_b: Vec<Vec<f64>> = (0..150).map(|_| (0..6).map(|_| rng.random::<f64>() * 2.0).collect()).collect();
        let a = set(rows_a);
        let b = set(rows_b);
        assert!(fid(&a, &a).unwrap().abs() < 1e-8);
        assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn fid_rank_deficient_sets() {
        // Fewer rows than dimensions: covariance is singular and gets shrunk.
        let a = set(vec![vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 1.0]]);
        let b = set(vec![vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 0.0]]);
        assert!(fid(&a, &a).unwrap().abs() < 1e-8);
        assert!(fid(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn fid_errors() {
        let a = set(vec![vec![1.0, 2.0]]);
        let b = set(vec![vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(fid(&a, &b), Err(Error::TooFewRows { rows: 1, min: 2 })));
        let c = set(vec![vec![1.0], vec![2.0]]);
        assert!(matches!(fid(&b, &c), Err(Error::DimensionMismatch(_))));
        assert!(FeatureSet::new(2, vec![vec![1.0]]).is_err());
        assert!(FeatureSet::new(1, vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn fid_orthogonal_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let rows_a: Vec<Vec<f64>> = (0..300).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let rows_b: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random::<f64>() * 3.0, rng.random(), rng.random::<f64>() + 1.0]).collect();
        let q = crate::geometry::rotation_between(
            crate::geometry::Direction::new(0.3, 0.4),
            crate::geometry::Direction::new(-0.5, 1.2),
        );
        let rot = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| {
                    let v = q.apply(&nalgebra::Vector3::new(r[0], r[1], r[2]));
                    vec![v.x, v.y, v.z]
                })
                .collect()
        };
        let before = fid(&set(rows_a.clone()), &set(rows_b.clone())).unwrap();
        let after = fid(&set(rot(&rows_a)), &set(rot(&rows_b))).unwrap();
        assert!((before - after).abs() < 1e-6);
    }

    #[test]
    fn redirection_error_cases() {
        let d = Direction::new(0.1, 0.2);
        assert_eq!(redirection_error(d, d), 0.0);
        let e = redirection_error(Direction::FRONTAL, Direction::new(0.0, std::f64::consts::FRAC_PI_2));
        assert!((e - 90.0).abs() < 1e-12);
    }
}
