//! Evaluation protocol: Frechet distance over pooled deep features (with
//! white-border padding and an optional JPEG-quality study), a perceptual
//! distance, object keypoint similarity, and contextual similarity.

use repose_autograd::{mean_spatial, Session, Tape, Tensor};
use repose_core::render::Keypoint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ConvFeatures, Features};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("set too small: {got} images, need at least {needed} (feature dim + 1) or shrinkage")]
    SetTooSmall { got: usize, needed: usize },
    #[error("numerical failure in {stage}: {message}")]
    Numerical { stage: String, message: String },
    #[error("no visible keypoints, similarity undefined")]
    NoVisibleKeypoints,
    #[error("jpeg codec failure: {0}")]
    Jpeg(String),
}

// ---------------------------------------------------------------------------
// symmetric eigendecomposition (cyclic Jacobi)
// ---------------------------------------------------------------------------

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix.
pub fn jacobi_eigh(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s
    };
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..100 {
        if off(&m) <= 1e-26 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    (eig, v)
}

// ---------------------------------------------------------------------------
// Gaussian statistics and the Frechet distance
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major d x d covariance.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fit from feature vectors (unbiased covariance). Optional shrinkage
    /// adds eps * trace/d to the diagonal.
    pub fn fit(features: &[Vec<f64>], shrinkage: Option<f64>) -> Result<Self, MetricError> {
        if features.is_empty() {
            return Err(MetricError::DimensionMismatch("no feature vectors".into()));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(MetricError::DimensionMismatch(
                "inconsistent feature dimensions".into(),
            ));
        }
        let n = features.len();
        let mut mean = vec![0.0f64; d];
        for f in features {
            for (m, x) in mean.iter_mut().zip(f.iter()) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = vec![0.0f64; d * d];
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        let denom = (n.max(2) - 1) as f64;
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] /= denom;
                cov[j * d + i] = cov[i * d + j];
            }
        }
        if let Some(eps) = shrinkage {
            let tr: f64 = (0..d).map(|i| cov[i * d + i]).sum();
            let add = eps * tr / d as f64;
            for i in 0..d {
                cov[i * d + i] += add;
            }
        }
        Ok(Self { mean, cov })
    }
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Symmetric PSD square root via eigendecomposition, negative
/// eigenvalues clamped to zero.
fn sqrtm_psd(a: &[f64], n: usize) -> Vec<f64> {
    let (eig, vecs) = jacobi_eigh(a, n);
    let mut out = vec![0.0f64; n * n];
    for k in 0..n {
        let s = eig[k].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vecs[i * n + k] * s;
            for j in 0..n {
                out[i * n + j] += vik * vecs[j * n + k];
            }
        }
    }
    out
}

/// Wasserstein-2 distance between Gaussians:
/// |mu1-mu2|^2 + tr(C1 + C2 - 2 (C1 C2)^{1/2}), with the square-root
/// trace computed from the symmetrized product S1 C2 S1.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricError> {
    let d = a.dim();
    if b.dim() != d {
        return Err(MetricError::DimensionMismatch(format!(
            "gaussian dims {} vs {}",
            d,
            b.dim()
        )));
    }
    for (name, g) in [("first", a), ("second", b)] {
        let c = &g.cov;
        let mut asym = 0.0f64;
        let mut norm = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                asym = asym.max((c[i * d + j] - c[j * d + i]).abs());
                norm = norm.max(c[i * d + j].abs());
            }
        }
        if asym > 1e-8 * norm.max(1.0) {
            return Err(MetricError::Numerical {
                stage: format!("{name} covariance"),
                message: format!("asymmetry {asym} exceeds tolerance"),
            });
        }
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let s1 = sqrtm_psd(&a.cov, d);
    let inner = matmul_sq(&matmul_sq(&s1, &b.cov, d), &s1, d);
    // symmetrize against round-off and verify it was small
    let mut sym = vec![0.0f64; d * d];
    let mut asym = 0.0f64;
    let mut norm = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            asym = asym.max((inner[i * d + j] - inner[j * d + i]).abs());
            norm = norm.max(inner[i * d + j].abs());
        }
    }
    if asym > 1e-6 * norm.max(1.0) {
        return Err(MetricError::Numerical {
            stage: "matrix square root".into(),
            message: format!(
                "symmetrized product asymmetry {asym} relative to {norm}"
            ),
        });
    }
    let (eig, _) = jacobi_eigh(&sym, d);
    let tr_sqrt: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();
    Ok(mean_term + tr_a + tr_b - 2.0 * tr_sqrt)
}

// ---------------------------------------------------------------------------
// image protocol: resize, pad, pooled features
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FidConfig {
    /// Square protocol resolution: aspect-preserving resize to this
    /// height, then centred white padding to a square.
    pub protocol_resolution: usize,
    /// Covariance shrinkage epsilon; None requires n >= dim + 1.
    pub shrinkage: Option<f64>,
}

impl Default for FidConfig {
    fn default() -> Self {
        Self {
            protocol_resolution: 64,
            shrinkage: None,
        }
    }
}

/// Plain bilinear resize of a (3,h,w) image tensor.
pub fn resize_image(image: &Tensor, oh: usize, ow: usize) -> Tensor {
    let s = image.shape();
    assert_eq!(s.len(), 3);
    Tensor::from_vec(&[3, oh, ow], resize_bilinear(image.data(), s[1], s[2], oh, ow))
}

/// Plain bilinear resize of a (3,h,w) image.
fn resize_bilinear(img: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; 3 * oh * ow];
    for c in 0..3 {
        let base = c * h * w;
        for y in 0..oh {
            let sy = ((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for x in 0..ow {
                let sx =
                    ((x as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let v = (1.0 - fy)
                    * ((1.0 - fx) * img[base + y0 * w + x0] + fx * img[base + y0 * w + x1])
                    + fy * ((1.0 - fx) * img[base + y1 * w + x0] + fx * img[base + y1 * w + x1]);
                out[c * oh * ow + y * ow + x] = v;
            }
        }
    }
    out
}

/// Protocol transform: aspect-preserving resize to the target height,
/// then centred padding to a square with a white border.
pub fn pad_to_protocol(image: &Tensor, target: usize) -> Tensor {
    let s = image.shape();
    assert_eq!(s.len(), 3);
    let (h, w) = (s[1], s[2]);
    let oh = target;
    let ow = ((w as f64 * target as f64 / h as f64).round() as usize).clamp(1, target);
    let resized = resize_bilinear(image.data(), h, w, oh, ow);
    let mut out = vec![1.0f64; 3 * target * target];
    let x_off = (target - ow) / 2;
    for c in 0..3 {
        for y in 0..oh {
            for x in 0..ow {
                out[c * target * target + y * target + x + x_off] =
                    resized[c * oh * ow + y * ow + x];
            }
        }
    }
    Tensor::from_vec(&[3, target, target], out)
}

/// Pooled deep features: protocol padding, extractor forward, then
/// global average pooling of the deepest layer concatenated with a
/// 2x2 quadrant pooling of the same layer (the quadrant part keeps the
/// statistics sensitive to coarse spatial layout).
pub fn pooled_features(
    extractor: &ConvFeatures,
    image: &Tensor,
    protocol_resolution: usize,
) -> Vec<f64> {
    let padded = pad_to_protocol(image, protocol_resolution);
    let tape = Tape::new();
    let r = protocol_resolution;
    let x = tape.constant(padded.reshaped(&[1, 3, r, r]));
    let layers = extractor.features(&tape, x);
    let (deepest, _) = layers[layers.len() - 1];
    let pooled = mean_spatial(&tape, deepest);
    let mut out = tape.value(pooled).data().to_vec();
    // quadrant statistics of the deepest layer
    let deep_val = tape.value(deepest);
    let shape = deep_val.shape().to_vec();
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let d = deep_val.data();
    for ch in 0..c {
        for qy in 0..2 {
            for qx in 0..2 {
                let (y0, y1) = (qy * h / 2, (qy + 1) * h / 2);
                let (x0, x1) = (qx * w / 2, (qx + 1) * w / 2);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += d[ch * h * w + y * w + x];
                    }
                }
                out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

/// Fit Gaussian statistics over a set of images.
pub fn fit_stats(
    extractor: &ConvFeatures,
    images: &[Tensor],
    cfg: &FidConfig,
) -> Result<GaussianStats, MetricError> {
    let dim = extractor.feature_dim();
    if cfg.shrinkage.is_none() && images.len() < dim + 1 {
        return Err(MetricError::SetTooSmall {
            got: images.len(),
            needed: dim + 1,
        });
    }
    use rayon::prelude::*;
    let features: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| pooled_features(extractor, img, cfg.protocol_resolution))
        .collect();
    GaussianStats::fit(&features, cfg.shrinkage)
}

/// Frechet distance between deep-feature Gaussians of two image sets.
pub fn fid(
    set_a: &[Tensor],
    set_b: &[Tensor],
    extractor: &ConvFeatures,
    cfg: &FidConfig,
) -> Result<f64, MetricError> {
    let ga = fit_stats(extractor, set_a, cfg)?;
    let gb = fit_stats(extractor, set_b, cfg)?;
    frechet_distance(&ga, &gb)
}

/// Perceptual distance: squared difference of channel-unit-normalized
/// activations, averaged over positions, summed over layers (unit linear
/// weights).
pub fn perceptual_distance(
    a: &Tensor,
    b: &Tensor,
    extractor: &ConvFeatures,
) -> Result<f64, MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let s = a.shape();
    let tape = Tape::new();
    let va = tape.constant(a.reshaped(&[1, s[0], s[1], s[2]]));
    let vb = tape.constant(b.reshaped(&[1, s[0], s[1], s[2]]));
    let fa = extractor.features(&tape, va);
    let fb = extractor.features(&tape, vb);
    let mut total = 0.0;
    for ((la, _), (lb, _)) in fa.iter().zip(fb.iter()) {
        let ta = tape.value(*la);
        let tb = tape.value(*lb);
        let shape = ta.shape().to_vec();
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        let da = ta.data();
        let db = tb.data();
        let mut layer_sum = 0.0;
        for p in 0..hw {
            let (mut na, mut nb) = (0.0f64, 0.0f64);
            for ch in 0..c {
                na += da[ch * hw + p] * da[ch * hw + p];
                nb += db[ch * hw + p] * db[ch * hw + p];
            }
            let (na, nb) = (na.sqrt().max(1e-10), nb.sqrt().max(1e-10));
            let mut d2 = 0.0;
            for ch in 0..c {
                let d = da[ch * hw + p] / na - db[ch * hw + p] / nb;
                d2 += d * d;
            }
            layer_sum += d2;
        }
        total += layer_sum / hw as f64;
    }
    Ok(total)
}

/// Object keypoint similarity: scale-normalized Gaussian of keypoint
/// displacement averaged over visible keypoints.
pub fn oks(
    predicted: &[Keypoint],
    ground_truth: &[Keypoint],
    object_scale: f64,
    kappas: &[f64],
) -> Result<f64, MetricError> {
    if predicted.len() != ground_truth.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "keypoint counts {} vs {}",
            predicted.len(),
            ground_truth.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, (p, g)) in predicted.iter().zip(ground_truth.iter()).enumerate() {
        if !g.visible {
            continue;
        }
        let kappa = kappas.get(i).copied().unwrap_or(0.1);
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        total += (-d2 / (2.0 * object_scale * object_scale * kappa * kappa)).exp();
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::NoVisibleKeypoints);
    }
    Ok(total / count as f64)
}

/// Scale convention for OKS: square root of the keypoint bounding-box
/// area (configurable upstream).
pub fn keypoint_object_scale(kps: &[Keypoint]) -> f64 {
    let mut x0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y0 = f64::INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for k in kps.iter().filter(|k| k.visible) {
        x0 = x0.min(k.x);
        x1 = x1.max(k.x);
        y0 = y0.min(k.y);
        y1 = y1.max(k.y);
    }
    if x1 <= x0 || y1 <= y0 {
        return 1.0;
    }
    ((x1 - x0) * (y1 - y0)).sqrt()
}

/// Contextual similarity: for each feature location in `a`, the best
/// normalized-cosine affinity to locations in `b`, averaged. Higher is
/// more similar.
pub fn cx_similarity(
    a: &Tensor,
    b: &Tensor,
    extractor: &ConvFeatures,
    layer: usize,
    bandwidth: f64,
) -> Result<f64, MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let s = a.shape();
    let tape = Tape::new();
    let va = tape.constant(a.reshaped(&[1, s[0], s[1], s[2]]));
    let vb = tape.constant(b.reshaped(&[1, s[0], s[1], s[2]]));
    let fa = extractor.features(&tape, va);
    let fb = extractor.features(&tape, vb);
    let layer = layer.min(fa.len() - 1);
    let ta = tape.value(fa[layer].0);
    let tb = tape.value(fb[layer].0);
    let shape = ta.shape().to_vec();
    let (c, hw) = (shape[1], shape[2] * shape[3]);
    let norm_cols = |t: &Tensor| -> Vec<f64> {
        let d = t.data();
        let mut out = vec![0.0f64; c * hw];
        for p in 0..hw {
            let mut n = 0.0;
            for ch in 0..c {
                n += d[ch * hw + p] * d[ch * hw + p];
            }
            let n = n.sqrt().max(1e-10);
            for ch in 0..c {
                out[ch * hw + p] = d[ch * hw + p] / n;
            }
        }
        out
    };
    let na = norm_cols(&ta);
    let nb = norm_cols(&tb);
    let mut score = 0.0;
    for i in 0..hw {
        // cosine distances from a_i to every b_j
        let mut dists = Vec::with_capacity(hw);
        let mut dmin = f64::INFINITY;
        for j in 0..hw {
            let mut cos = 0.0;
            for ch in 0..c {
                cos += na[ch * hw + i] * nb[ch * hw + j];
            }
            let d = 1.0 - cos;
            dmin = dmin.min(d);
            dists.push(d);
        }
        // contextual normalization of affinities
        let mut wsum = 0.0;
        let mut wmax = 0.0f64;
        for d in dists {
            let dn = d / (dmin + 1e-5);
            let w = ((1.0 - dn) / bandwidth).exp();
            wsum += w;
            wmax = wmax.max(w);
        }
        score += wmax / wsum;
    }
    Ok(score / hw as f64)
}

// ---------------------------------------------------------------------------
// JPEG quality study
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quality {
    Jpeg(u8),
    Raw,
}

impl std::fmt::Display for Quality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Quality::Jpeg(q) => write!(f, "{q}"),
            Quality::Raw => write!(f, "RAW"),
        }
    }
}

pub const STUDY_QUALITIES: [Quality; 4] = [
    Quality::Jpeg(80),
    Quality::Jpeg(90),
    Quality::Jpeg(95),
    Quality::Raw,
];

/// Round-trip an image through the baseline JPEG codec at a quality level.
pub fn jpeg_round_trip(image: &Tensor, quality: u8) -> Result<Tensor, MetricError> {
    use image::codecs::jpeg::JpegEncoder;
    use image::ImageEncoder;
    let s = image.shape();
    let (h, w) = (s[1], s[2]);
    let hw = h * w;
    let mut rgb = vec![0u8; 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            rgb[p * 3 + c] = (image.data()[c * hw + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let mut encoded = Vec::new();
    let encoder = JpegEncoder::new_with_quality(&mut encoded, quality);
    encoder
        .write_image(
            &rgb,
            w as u32,
            h as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| MetricError::Jpeg(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&encoded, image::ImageFormat::Jpeg)
        .map_err(|e| MetricError::Jpeg(e.to_string()))?
        .to_rgb8();
    let mut out = vec![0.0f64; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let px = decoded.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out[c * hw + y * w + x] = px[c] as f64 / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], out))
}

fn apply_quality(set: &[Tensor], q: Quality) -> Result<Vec<Tensor>, MetricError> {
    match q {
        Quality::Raw => Ok(set.to_vec()),
        Quality::Jpeg(level) => set.iter().map(|t| jpeg_round_trip(t, level)).collect(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JpegStudy {
    pub qualities: Vec<String>,
    /// fid_matrix[gen_idx][ref_idx]
    pub fid_matrix: Vec<Vec<f64>>,
}

impl JpegStudy {
    /// Text table in the appendix layout: GEN rows, REF columns.
    pub fn render_table(&self) -> String {
        let mut out = String::from("GEN\\REF");
        for q in &self.qualities {
            out.push_str(&format!("{q:>10}"));
        }
        out.push('\n');
        for (i, row) in self.fid_matrix.iter().enumerate() {
            out.push_str(&format!("{:>7}", self.qualities[i]));
            for v in row {
                out.push_str(&format!("{v:>10.3}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Full FID grid over JPEG quality levels for generated and reference
/// sets; RAW means untouched images.
pub fn jpeg_quality_study(
    generated: &[Tensor],
    reference: &[Tensor],
    extractor: &ConvFeatures,
    cfg: &FidConfig,
) -> Result<JpegStudy, MetricError> {
    let mut matrix = Vec::with_capacity(STUDY_QUALITIES.len());
    // precompute per-quality stats so each set is encoded once
    let mut gen_stats = Vec::new();
    let mut ref_stats = Vec::new();
    for q in STUDY_QUALITIES {
        gen_stats.push(fit_stats(extractor, &apply_quality(generated, q)?, cfg)?);
        ref_stats.push(fit_stats(extractor, &apply_quality(reference, q)?, cfg)?);
    }
    for gs in &gen_stats {
        let mut row = Vec::with_capacity(STUDY_QUALITIES.len());
        for rs in &ref_stats {
            row.push(frechet_distance(gs, rs)?);
        }
        matrix.push(row);
    }
    Ok(JpegStudy {
        qualities: STUDY_QUALITIES.iter().map(|q| q.to_string()).collect(),
        fid_matrix: matrix,
    })
}

// silence an unused-import lint when compiled without tests
#[allow(unused_imports)]
use Session as _SessionAlias;
