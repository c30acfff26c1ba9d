//! Training losses: cycle (perceptual + style + pixel), flow sampling
//! correctness with regularization, conditional adversarial, 3D pose,
//! shape consistency, and torso appearance consistency gated by the
//! relative pelvis rotation.

use std::sync::Arc;

use repose_autograd::{
    abs, add, add_scalar, avg_pool2d, clamp, detach, ln, matmul, mean, mul, neg, reshape,
    roi_resample, scale, sigmoid, slice, sqrt, sub, sum, sum_axis, transpose2, warp_bilinear,
    Session, Tape, Tensor, Var,
};
use repose_core::bodymodel::{forward as body_forward, BodyParams, BodyTemplate, Segment};
use repose_core::render::{render_segment_mask, Camera, SegmentMask};
use repose_core::rotmath::{geodesic_angle_deg, Mat3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Features;
use crate::gen::{Discriminator, FlowField};

const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("resolution mismatch between loss inputs: {0:?} vs {1:?}")]
    ResolutionMismatch(Vec<usize>, Vec<usize>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("render failure inside loss: {0}")]
    Render(#[from] repose_core::render::RenderError),
    #[error("body failure inside loss: {0}")]
    Body(#[from] repose_core::bodymodel::BodyError),
}

/// All loss weights; defaults follow the published training setup.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub lambda_percep: f64,
    pub lambda_style: f64,
    pub lambda_pix: f64,
    pub lambda_a1: f64,
    pub lambda_a2: f64,
    pub alpha_cycle: f64,
    pub alpha_flow: f64,
    pub alpha_adv: f64,
    pub alpha_pose: f64,
    pub alpha_shape: f64,
    pub alpha_app: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_percep: 0.5,
            lambda_style: 500.0,
            lambda_pix: 5.0,
            lambda_a1: 0.01,
            lambda_a2: 10.0,
            alpha_cycle: 1.0,
            alpha_flow: 1.0,
            alpha_adv: 1.0,
            alpha_pose: 0.01,
            alpha_shape: 0.01,
            alpha_app: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.lambda_percep,
            self.lambda_style,
            self.lambda_pix,
            self.lambda_a1,
            self.lambda_a2,
            self.alpha_cycle,
            self.alpha_flow,
            self.alpha_adv,
            self.alpha_pose,
            self.alpha_shape,
            self.alpha_app,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(LossError::DimensionMismatch(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn check_same_shape(tape: &Tape, a: Var, b: Var) -> Result<(), LossError> {
    let sa = tape.shape(a);
    let sb = tape.shape(b);
    if sa != sb {
        return Err(LossError::ResolutionMismatch(sa, sb));
    }
    Ok(())
}

/// Mean absolute difference of feature maps, per layer, summed.
pub fn perceptual_loss(tape: &Tape, phi: &dyn Features, a: Var, b: Var) -> Result<Var, LossError> {
    check_same_shape(tape, a, b)?;
    let fa = phi.features(tape, a);
    let fb = phi.features(tape, b);
    let mut total = tape.constant(Tensor::scalar(0.0));
    for ((va, _), (vb, _)) in fa.iter().zip(fb.iter()) {
        let term = mean(tape, abs(tape, sub(tape, *va, *vb)));
        total = add(tape, total, term);
    }
    Ok(total)
}

/// Gram matrix of one activation map (c,h,w) or (1,c,h,w):
/// G[i,j] = sum_pixels phi_i phi_j / (C*H*W).
pub fn gram_matrix(tape: &Tape, act: Var) -> Var {
    let shape = tape.shape(act);
    let (c, h, w) = match shape.len() {
        3 => (shape[0], shape[1], shape[2]),
        4 => {
            assert_eq!(shape[0], 1, "gram_matrix expects a single map");
            (shape[1], shape[2], shape[3])
        }
        _ => panic!("gram_matrix expects (c,h,w), got {shape:?}"),
    };
    let flat = reshape(tape, act, &[c, h * w]);
    let g = matmul(tape, flat, transpose2(tape, flat));
    scale(tape, g, 1.0 / (c * h * w) as f64)
}

/// Per-sample Gram matrices for a batch (n,c,h,w), stacked (n,c,c).
fn gram_batch(tape: &Tape, act: Var) -> Var {
    let shape = tape.shape(act);
    assert_eq!(shape.len(), 4);
    let n = shape[0];
    let grams: Vec<Var> = (0..n)
        .map(|i| {
            let single = slice(tape, act, 0, i, i + 1);
            let g = gram_matrix(tape, single);
            reshape(tape, g, &[1, shape[1], shape[1]])
        })
        .collect();
    if grams.len() == 1 {
        grams[0]
    } else {
        repose_autograd::concat(tape, &grams, 0)
    }
}

/// Mean absolute difference of Gram matrices, per layer, summed.
pub fn style_loss(tape: &Tape, phi: &dyn Features, a: Var, b: Var) -> Result<Var, LossError> {
    check_same_shape(tape, a, b)?;
    let fa = phi.features(tape, a);
    let fb = phi.features(tape, b);
    let mut total = tape.constant(Tensor::scalar(0.0));
    for ((va, _), (vb, _)) in fa.iter().zip(fb.iter()) {
        let ga = gram_batch(tape, *va);
        let gb = gram_batch(tape, *vb);
        let term = mean(tape, abs(tape, sub(tape, ga, gb)));
        total = add(tape, total, term);
    }
    Ok(total)
}

pub fn pixel_loss(tape: &Tape, a: Var, b: Var) -> Result<Var, LossError> {
    check_same_shape(tape, a, b)?;
    Ok(mean(tape, abs(tape, sub(tape, a, b))))
}

/// Reconstruction loss closing the cycle.
pub fn cycle_loss(
    tape: &Tape,
    phi: &dyn Features,
    i_s: Var,
    i_hat_s: Var,
    weights: &LossWeights,
) -> Result<Var, LossError> {
    let p = perceptual_loss(tape, phi, i_s, i_hat_s)?;
    let s = style_loss(tape, phi, i_s, i_hat_s)?;
    let pix = pixel_loss(tape, i_s, i_hat_s)?;
    Ok(add(
        tape,
        add(
            tape,
            scale(tape, p, weights.lambda_percep),
            scale(tape, s, weights.lambda_style),
        ),
        scale(tape, pix, weights.lambda_pix),
    ))
}

/// Body coverage of a rendering batch (n,3,h,w): colour-wheel pixels have
/// full HSV value, the background is black.
fn coverage_of_rendering(rendering: &Tensor) -> Tensor {
    let s = rendering.shape();
    let (n, hw) = (s[0], s[2] * s[3]);
    let d = rendering.data();
    let mut out = vec![0.0f64; n * hw];
    for ni in 0..n {
        for p in 0..hw {
            let base = ni * 3 * hw + p;
            let m = d[base].max(d[base + hw]).max(d[base + 2 * hw]);
            out[ni * hw + p] = if m > 0.25 { 1.0 } else { 0.0 };
        }
    }
    Tensor::from_vec(&[n, 1, s[2], s[3]], out)
}

/// Box-downsample a binary mask by 2^d and re-binarize at half coverage.
fn downsample_mask(mask: &Tensor, d: usize) -> Tensor {
    if d == 0 {
        return mask.clone();
    }
    let f = 1 << d;
    let s = mask.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let (oh, ow) = (h / f, w / f);
    let src = mask.data();
    let mut out = vec![0.0f64; n * oh * ow];
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        acc += src[ni * h * w + (oy * f + dy) * w + ox * f + dx];
                    }
                }
                out[ni * oh * ow + oy * ow + ox] =
                    if acc / (f * f) as f64 >= 0.5 { 1.0 } else { 0.0 };
            }
        }
    }
    Tensor::from_vec(&[n, 1, oh, ow], out)
}

/// Warp a mask by flow values, border-clamped bilinear, then binarize.
fn warp_mask_values(mask: &Tensor, flow: &Tensor) -> Tensor {
    let s = mask.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let md = mask.data();
    let fd = flow.data();
    let plane = h * w;
    let mut out = vec![0.0f64; n * plane];
    let tap = |v: f64, size: usize| -> (usize, usize, f64) {
        let max = (size - 1) as f64;
        let c = v.clamp(0.0, max);
        let i0 = (c.floor() as usize).min(size - 1);
        (i0, (i0 + 1).min(size - 1), c - i0 as f64)
    };
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let sx = x as f64 + fd[ni * 2 * plane + p];
                let sy = y as f64 + fd[ni * 2 * plane + plane + p];
                let (x0, x1, fx) = tap(sx, w);
                let (y0, y1, fy) = tap(sy, h);
                let base = ni * plane;
                let v = (1.0 - fy)
                    * ((1.0 - fx) * md[base + y0 * w + x0] + fx * md[base + y0 * w + x1])
                    + fy * ((1.0 - fx) * md[base + y1 * w + x0] + fx * md[base + y1 * w + x1]);
                out[base + p] = if v > 0.5 { 1.0 } else { 0.0 };
            }
        }
    }
    Tensor::from_vec(&[n, 1, h, w], out)
}

/// One direction of the sampling-correctness term: cosine distance
/// between flow-warped source features and target features at the
/// designated layer, averaged where both coverages are present.
fn sampling_correctness(
    tape: &Tape,
    phi: &dyn Features,
    r_src: Var,
    r_dst: Var,
    flows: &FlowField,
    layer: usize,
) -> Result<Var, LossError> {
    let f_src = phi.features(tape, r_src);
    let f_dst = phi.features(tape, r_dst);
    if layer >= f_src.len() {
        return Err(LossError::DimensionMismatch(format!(
            "flow layer {layer} out of range ({} layers)",
            f_src.len()
        )));
    }
    let (phi_src, d_src) = f_src[layer];
    let (phi_dst, _) = f_dst[layer];
    let feat_shape = tape.shape(phi_src);
    let (hh, ww) = (feat_shape[2], feat_shape[3]);

    let flow = flows
        .flows
        .iter()
        .find(|f| {
            let s = tape.shape(**f);
            s[2] == hh && s[3] == ww
        })
        .copied()
        .ok_or_else(|| {
            LossError::DimensionMismatch(format!("no flow scale matches feature size {hh}x{ww}"))
        })?;

    let warped = warp_bilinear(tape, phi_src, flow);

    // validity mask: destination coverage AND source coverage carried
    // along the flow; coverage is data, not part of the graph
    let cov_src = downsample_mask(&coverage_of_rendering(&tape.value(r_src)), d_src);
    let cov_dst = downsample_mask(&coverage_of_rendering(&tape.value(r_dst)), d_src);
    let cov_src_w = warp_mask_values(&cov_src, &tape.value(flow));
    let mask = {
        let mut m = cov_dst.clone();
        let md = m.data_mut();
        for (v, s) in md.iter_mut().zip(cov_src_w.data().iter()) {
            *v *= s;
        }
        m
    };
    let count = mask.sum();
    if count < 1.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }

    let dot = sum_axis(tape, mul(tape, warped, phi_dst), 1);
    let nw = sqrt(
        tape,
        add_scalar(tape, sum_axis(tape, mul(tape, warped, warped), 1), 1e-16),
    );
    let nd = sqrt(
        tape,
        add_scalar(tape, sum_axis(tape, mul(tape, phi_dst, phi_dst), 1), 1e-16),
    );
    let cos = clamp(
        tape,
        repose_autograd::div(tape, dot, mul(tape, nw, nd)),
        -1.0,
        1.0,
    );
    let dist = add_scalar(tape, neg(tape, cos), 1.0);
    let masked = mul(tape, dist, tape.constant(mask));
    Ok(scale(tape, sum(tape, masked), 1.0 / count))
}

/// Total-variation regularizer: mean squared forward differences of each
/// flow map, summed over scales.
fn flow_tv(tape: &Tape, flows: &FlowField) -> Var {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for &f in &flows.flows {
        let s = tape.shape(f);
        let (h, w) = (s[2], s[3]);
        if w > 1 {
            let dx = sub(
                tape,
                slice(tape, f, 3, 1, w),
                slice(tape, f, 3, 0, w - 1),
            );
            total = add(tape, total, mean(tape, mul(tape, dx, dx)));
        }
        if h > 1 {
            let dy = sub(
                tape,
                slice(tape, f, 2, 1, h),
                slice(tape, f, 2, 0, h - 1),
            );
            total = add(tape, total, mean(tape, mul(tape, dy, dy)));
        }
    }
    total
}

/// Bidirectional flow loss: sampling correctness both ways plus the
/// total-variation regularizer on every flow map.
#[allow(clippy::too_many_arguments)]
pub fn flow_loss(
    tape: &Tape,
    phi: &dyn Features,
    r_s: Var,
    r_t: Var,
    ff_st: &FlowField,
    ff_ts: &FlowField,
    layer: usize,
    reg_weight: f64,
) -> Result<Var, LossError> {
    check_same_shape(tape, r_s, r_t)?;
    let st = sampling_correctness(tape, phi, r_s, r_t, ff_st, layer)?;
    let ts = sampling_correctness(tape, phi, r_t, r_s, ff_ts, layer)?;
    let reg = add(tape, flow_tv(tape, ff_st), flow_tv(tape, ff_ts));
    Ok(add(tape, add(tape, st, ts), scale(tape, reg, reg_weight)))
}

fn log_prob(tape: &Tape, logits: Var) -> Var {
    ln(
        tape,
        clamp(tape, sigmoid(tape, logits), PROB_CLAMP, 1.0 - PROB_CLAMP),
    )
}

fn log_one_minus_prob(tape: &Tape, logits: Var) -> Var {
    let p = clamp(tape, sigmoid(tape, logits), PROB_CLAMP, 1.0 - PROB_CLAMP);
    ln(tape, add_scalar(tape, neg(tape, p), 1.0))
}

/// Discriminator objective: real pairs scored up, fakes (detached) down.
pub fn adversarial_d_loss(
    sd: &Session,
    d: &Discriminator,
    i_s: Var,
    r_s: Var,
    i_hat_t: Var,
    r_t: Var,
) -> Var {
    let t = sd.tape;
    let fake = detach(t, i_hat_t);
    let logits_real = d.forward(sd, i_s, r_s);
    let logits_fake = d.forward(sd, fake, r_t);
    let l_real = neg(t, mean(t, log_prob(t, logits_real)));
    let l_fake = neg(t, mean(t, log_one_minus_prob(t, logits_fake)));
    add(t, l_real, l_fake)
}

/// Non-saturating generator objective.
pub fn adversarial_g_loss(sd: &Session, d: &Discriminator, i_hat_t: Var, r_t: Var) -> Var {
    let t = sd.tape;
    let logits = d.forward(sd, i_hat_t, r_t);
    neg(t, mean(t, log_prob(t, logits)))
}

/// Both adversarial terms at once; the generated image is treated as a
/// constant inside the discriminator term.
pub fn adversarial_losses(
    sd: &Session,
    d: &Discriminator,
    i_hat_t: Var,
    r_t: Var,
    i_s: Var,
    r_s: Var,
) -> (Var, Var) {
    let l_d = adversarial_d_loss(sd, d, i_s, r_s, i_hat_t, r_t);
    let l_g = adversarial_g_loss(sd, d, i_hat_t, r_t);
    (l_d, l_g)
}

/// L1 between rotation-matrix batches (m,9).
pub fn pose_loss(tape: &Tape, theta_t: Var, theta_hat_t: Var) -> Result<Var, LossError> {
    let sa = tape.shape(theta_t);
    let sb = tape.shape(theta_hat_t);
    if sa != sb {
        return Err(LossError::DimensionMismatch(format!(
            "pose loss joint count mismatch: {sa:?} vs {sb:?}"
        )));
    }
    Ok(mean(tape, abs(tape, sub(tape, theta_t, theta_hat_t))))
}

/// L1 between shape coefficient batches; the source estimate is a target
/// (detached), gradient reaches only the second argument.
pub fn shape_loss(tape: &Tape, beta_s: Var, beta_hat_t: Var) -> Result<Var, LossError> {
    let sa = tape.shape(beta_s);
    let sb = tape.shape(beta_hat_t);
    if sa != sb {
        return Err(LossError::DimensionMismatch(format!(
            "shape loss dimension mismatch: {sa:?} vs {sb:?}"
        )));
    }
    let target = detach(tape, beta_s);
    Ok(mean(tape, abs(tape, sub(tape, target, beta_hat_t))))
}

/// Masked patch cut from an image by the tight bounding box of a segment
/// mask, resampled to a fixed square (continuous-coordinate bilinear).
pub struct SegmentPatch {
    /// (3,S,S), zero outside the mask.
    pub patch: Var,
    /// (S,S) binary mask.
    pub mask: Tensor,
    /// Source box in pixels: x0, y0, x1, y1.
    pub bbox: [f64; 4],
}

/// None when the mask is empty (the caller skips the term).
pub fn extract_patch(
    tape: &Tape,
    image: Var,
    mask: &SegmentMask,
    patch_size: usize,
) -> Option<SegmentPatch> {
    let (w, h) = (mask.width, mask.height);
    let mut x0 = usize::MAX;
    let mut x1 = 0usize;
    let mut y0 = usize::MAX;
    let mut y1 = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mask.mask[y * w + x] > 0.5 {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    let bbox = [x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64];

    let mask_t = Tensor::from_vec(&[h, w], mask.mask.clone());
    let masked = mul(tape, image, tape.constant(mask_t.clone()));
    let patch_raw = roi_resample(tape, masked, bbox, patch_size);

    // resample the mask on the same grid (plain data path), binarize
    let sx = (bbox[2] - bbox[0]) / patch_size as f64;
    let sy = (bbox[3] - bbox[1]) / patch_size as f64;
    let mut m = vec![0.0f64; patch_size * patch_size];
    let md = mask_t.data();
    for i in 0..patch_size {
        for j in 0..patch_size {
            let px = bbox[0] + (j as f64 + 0.5) * sx - 0.5;
            let py = bbox[1] + (i as f64 + 0.5) * sy - 0.5;
            let cx = px.clamp(0.0, (w - 1) as f64);
            let cy = py.clamp(0.0, (h - 1) as f64);
            let (ix0, iy0) = (cx.floor() as usize, cy.floor() as usize);
            let (ix1, iy1) = ((ix0 + 1).min(w - 1), (iy0 + 1).min(h - 1));
            let (fx, fy) = (cx - ix0 as f64, cy - iy0 as f64);
            let v = (1.0 - fy) * ((1.0 - fx) * md[iy0 * w + ix0] + fx * md[iy0 * w + ix1])
                + fy * ((1.0 - fx) * md[iy1 * w + ix0] + fx * md[iy1 * w + ix1]);
            m[i * patch_size + j] = if v >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    let mask_small = Tensor::from_vec(&[patch_size, patch_size], m);
    // enforce the invariant: the patch is zero wherever the mask is zero
    let patch = mul(tape, patch_raw, tape.constant(mask_small.clone()));
    Some(SegmentPatch {
        patch,
        mask: mask_small,
        bbox,
    })
}

/// Appearance distance between two masked patches: masked activation L1
/// plus masked Gram L1, with masks average-pooled per layer factor. The
/// Gram term masks the activations before building the Gram matrix.
#[allow(clippy::too_many_arguments)]
pub fn appearance_core(
    tape: &Tape,
    phi: &dyn Features,
    p_s: Var,
    m_s: &Tensor,
    p_t: Var,
    m_t: &Tensor,
    lambda_a1: f64,
    lambda_a2: f64,
) -> Result<Var, LossError> {
    check_same_shape(tape, p_s, p_t)?;
    let shape = tape.shape(p_s);
    assert_eq!(shape.len(), 3, "appearance patches are single images");
    let size = shape[1];
    let batchify = |v: Var| reshape(tape, v, &[1, shape[0], size, size]);
    let fs = phi.features(tape, batchify(p_s));
    let ft = phi.features(tape, batchify(p_t));
    let mask_var = |m: &Tensor, d: usize| -> Var {
        let mv = tape.constant(m.reshaped(&[1, 1, size, size]));
        avg_pool2d(tape, mv, 1 << d)
    };
    let mut term1 = tape.constant(Tensor::scalar(0.0));
    let mut term2 = tape.constant(Tensor::scalar(0.0));
    for ((vs, d), (vt, _)) in fs.iter().zip(ft.iter()) {
        let psi_s = mask_var(m_s, *d);
        let psi_t = mask_var(m_t, *d);
        let as_ = mul(tape, *vs, psi_s);
        let at = mul(tape, *vt, psi_t);
        term1 = add(tape, term1, mean(tape, abs(tape, sub(tape, as_, at))));
        let gs = gram_batch(tape, as_);
        let gt = gram_batch(tape, at);
        term2 = add(tape, term2, mean(tape, abs(tape, sub(tape, gs, gt))));
    }
    Ok(add(
        tape,
        scale(tape, term1, lambda_a1),
        scale(tape, term2, lambda_a2),
    ))
}

/// The pelvis-rotation step function on the angle itself (degrees).
pub fn appearance_weight_from_angle(delta_deg: f64) -> f64 {
    if delta_deg < 20.0 {
        1.0
    } else if delta_deg < 40.0 {
        0.1
    } else if delta_deg < 60.0 {
        0.01
    } else {
        0.0
    }
}

/// Step weighting by relative pelvis rotation (geodesic angle).
pub fn appearance_weight(pelvis_s: &Mat3, pelvis_t: &Mat3) -> f64 {
    appearance_weight_from_angle(geodesic_angle_deg(pelvis_s, pelvis_t))
}

/// Pre-rendered torso masks for one image.
pub struct TorsoMasks {
    pub front: SegmentMask,
    pub back: SegmentMask,
}

/// Render front/back torso masks for given body parameters. For the
/// generated image, pass the source shape with the target pose.
pub fn render_torso_masks(
    template: &Arc<BodyTemplate>,
    params: &BodyParams,
    resolution: usize,
) -> Result<TorsoMasks, LossError> {
    let mesh = body_forward(template, params)?;
    let cam = Camera::new(params.camera.scale, params.camera.t, resolution, resolution)?;
    Ok(TorsoMasks {
        front: render_segment_mask(&mesh, &cam, Segment::FrontTorso)?,
        back: render_segment_mask(&mesh, &cam, Segment::BackTorso)?,
    })
}

/// Weighted appearance loss over the front/back torso segments, given
/// pre-rendered masks. Segments with an empty mask in either image
/// contribute zero.
#[allow(clippy::too_many_arguments)]
pub fn appearance_loss_with_masks(
    tape: &Tape,
    phi: &dyn Features,
    i_s: Var,
    i_hat_t: Var,
    masks_s: &TorsoMasks,
    masks_t: &TorsoMasks,
    lambda: f64,
    weights: &LossWeights,
    patch_size: usize,
) -> Result<Var, LossError> {
    if lambda == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (ms, mt) in [(&masks_s.front, &masks_t.front), (&masks_s.back, &masks_t.back)] {
        let (Some(ps), Some(pt)) = (
            extract_patch(tape, i_s, ms, patch_size),
            extract_patch(tape, i_hat_t, mt, patch_size),
        ) else {
            continue;
        };
        let core = appearance_core(
            tape,
            phi,
            ps.patch,
            &ps.mask,
            pt.patch,
            &pt.mask,
            weights.lambda_a1,
            weights.lambda_a2,
        )?;
        total = add(tape, total, core);
    }
    Ok(scale(tape, total, lambda))
}

/// Full appearance loss from body parameters: renders all masks (target
/// masks from the source shape in the target pose), applies the pelvis
/// weighting, and runs the masked patch comparison.
#[allow(clippy::too_many_arguments)]
pub fn appearance_loss(
    tape: &Tape,
    phi: &dyn Features,
    i_s: Var,
    i_hat_t: Var,
    params_s: &BodyParams,
    params_t: &BodyParams,
    template: &Arc<BodyTemplate>,
    weights: &LossWeights,
    patch_size: usize,
) -> Result<Var, LossError> {
    let lambda = appearance_weight(&params_s.rotations[0], &params_t.rotations[0]);
    if lambda == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let res = tape.shape(i_s)[1];
    let masks_s = render_torso_masks(template, params_s, res)?;
    let target_params = BodyParams {
        betas: params_s.betas.clone(),
        rotations: params_t.rotations.clone(),
        camera: params_t.camera,
    };
    let masks_t = render_torso_masks(template, &target_params, res)?;
    appearance_loss_with_masks(
        tape, phi, i_s, i_hat_t, &masks_s, &masks_t, lambda, weights, patch_size,
    )
}

/// Per-term values of one training step, for logs and tests.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub cycle: f64,
    pub flow: f64,
    pub adversarial_g: f64,
    pub adversarial_d: f64,
    pub pose: f64,
    pub shape: f64,
    pub appearance: f64,
    pub total: f64,
}

/// Graph-level components entering the generator objective.
pub struct TotalLossInputs {
    pub cycle: Var,
    pub flow: Var,
    pub adversarial_g: Var,
    pub pose: Var,
    pub shape: Var,
    pub appearance: Var,
}

/// Weighted total generator loss plus the per-term breakdown.
pub fn total_loss(
    tape: &Tape,
    inputs: &TotalLossInputs,
    weights: &LossWeights,
) -> (Var, LossBreakdown) {
    let terms = [
        (inputs.cycle, weights.alpha_cycle),
        (inputs.flow, weights.alpha_flow),
        (inputs.adversarial_g, weights.alpha_adv),
        (inputs.pose, weights.alpha_pose),
        (inputs.shape, weights.alpha_shape),
        (inputs.appearance, weights.alpha_app),
    ];
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (v, w) in terms {
        total = add(tape, total, scale(tape, v, w));
    }
    let breakdown = LossBreakdown {
        cycle: tape.value(inputs.cycle).item(),
        flow: tape.value(inputs.flow).item(),
        adversarial_g: tape.value(inputs.adversarial_g).item(),
        adversarial_d: 0.0,
        pose: tape.value(inputs.pose).item(),
        shape: tape.value(inputs.shape).item(),
        appearance: tape.value(inputs.appearance).item(),
        total: tape.value(total).item(),
    };
    (total, breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{ConvFeatures, ExtractorConfig, IdentityFeatures};
    use crate::gen::{Discriminator, Generator, GeneratorConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use repose_core::bodymodel::{build_default_template, BodyConfig, CameraParams, NUM_JOINTS};
    use repose_core::rotmath::axis_angle_to_matrix;
    use std::sync::Arc;

    fn rand_img(seed: u64, c: usize, res: usize) -> Tensor {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[c, res, res],
            (0..c * res * res).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
    }

    fn batch_img(seed: u64, res: usize) -> Tensor {
        rand_img(seed, 3, res).reshaped(&[1, 3, res, res])
    }

    #[test]
    fn perceptual_zero_symmetric_and_constant_offset() {
        let tape = Tape::new();
        let a = tape.constant(batch_img(1, 8));
        let same = perceptual_loss(&tape, &IdentityFeatures, a, a).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);

        let b = tape.constant(batch_img(2, 8));
        let ab = perceptual_loss(&tape, &IdentityFeatures, a, b).unwrap();
        let ba = perceptual_loss(&tape, &IdentityFeatures, b, a).unwrap();
        assert!((tape.value(ab).item() - tape.value(ba).item()).abs() < 1e-15);

        // identity extractor, constant difference of 0.5
        let zeros = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let halves = tape.constant(Tensor::full(&[1, 3, 8, 8], 0.5));
        let l = perceptual_loss(&tape, &IdentityFeatures, zeros, halves).unwrap();
        assert!((tape.value(l).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perceptual_rejects_resolution_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(batch_img(1, 8));
        let b = tape.constant(batch_img(2, 16));
        assert!(matches!(
            perceptual_loss(&tape, &IdentityFeatures, a, b),
            Err(LossError::ResolutionMismatch(_, _))
        ));
    }

    #[test]
    fn gram_matrix_known_values() {
        let tape = Tape::new();
        // all-zero map
        let z = tape.constant(Tensor::zeros(&[2, 3, 3]));
        assert!(tape.value(gram_matrix(&tape, z)).data().iter().all(|&v| v == 0.0));

        // 2-channel 1x1 map with values (1,2): G = [[1,2],[2,4]] / 2
        let m = tape.constant(Tensor::from_vec(&[2, 1, 1], vec![1.0, 2.0]));
        let g = tape.value(gram_matrix(&tape, m));
        assert_eq!(g.shape(), &[2, 2]);
        let expect = [0.5, 1.0, 1.0, 2.0];
        for (a, b) in g.data().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gram_matrix_symmetric_psd() {
        let tape = Tape::new();
        let act = tape.constant(rand_img(5, 4, 6));
        let g = tape.value(gram_matrix(&tape, act));
        let d = 4;
        for i in 0..d {
            for j in 0..d {
                assert!((g.data()[i * d + j] - g.data()[j * d + i]).abs() < 1e-12);
            }
        }
        // PSD: x^T G x >= 0 for a few random x
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..5 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += x[i] * g.data()[i * d + j] * x[j];
                }
            }
            assert!(q >= -1e-12, "not PSD: {q}");
        }
    }

    #[test]
    fn cycle_loss_zero_linear_and_hand_computed() {
        let tape = Tape::new();
        let a = tape.constant(batch_img(3, 8));
        let w = LossWeights::default();
        let zero = cycle_loss(&tape, &IdentityFeatures, a, a, &w).unwrap();
        assert_eq!(tape.value(zero).item(), 0.0);

        // linearity in each lambda with the others zeroed
        let b = tape.constant(batch_img(4, 8));
        for pick in 0..3 {
            let mut w1 = LossWeights {
                lambda_percep: 0.0,
                lambda_style: 0.0,
                lambda_pix: 0.0,
                ..LossWeights::default()
            };
            match pick {
                0 => w1.lambda_percep = 0.7,
                1 => w1.lambda_style = 0.7,
                _ => w1.lambda_pix = 0.7,
            }
            let mut w2 = w1.clone();
            match pick {
                0 => w2.lambda_percep = 1.4,
                1 => w2.lambda_style = 1.4,
                _ => w2.lambda_pix = 1.4,
            }
            let l1 = tape.value(cycle_loss(&tape, &IdentityFeatures, a, b, &w1).unwrap()).item();
            let l2 = tape.value(cycle_loss(&tape, &IdentityFeatures, a, b, &w2).unwrap()).item();
            assert!((l2 - 2.0 * l1).abs() < 1e-12, "term {pick}: {l1} {l2}");
        }

        // constants a = 0, b = 1 with the identity extractor:
        // pixel = 1; percep = 1; style = mean|G_b| with G_b = 1/3 everywhere
        let zeros = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let ones = tape.constant(Tensor::ones(&[1, 3, 8, 8]));
        let w = LossWeights::default();
        let l = tape.value(cycle_loss(&tape, &IdentityFeatures, zeros, ones, &w).unwrap()).item();
        let expect = w.lambda_percep * 1.0 + w.lambda_style * (1.0 / 3.0) + w.lambda_pix * 1.0;
        assert!((l - expect).abs() < 1e-9, "{l} vs {expect}");
    }

    /// Flow field with constant values at every configured scale.
    fn const_flow(tape: &Tape, res: usize, scales: usize, dx: f64, dy: f64) -> FlowField {
        let mut flows = Vec::new();
        let mut occl = Vec::new();
        for s in 0..scales {
            let r = res >> s;
            let mut data = vec![0.0f64; 2 * r * r];
            for v in data.iter_mut().take(r * r) {
                *v = dx / (1 << s) as f64;
            }
            for v in data.iter_mut().skip(r * r) {
                *v = dy / (1 << s) as f64;
            }
            flows.push(tape.constant(Tensor::from_vec(&[1, 2, r, r], data)));
            occl.push(tape.constant(Tensor::full(&[1, 1, r, r], 1.0)));
        }
        FlowField {
            flows,
            occlusions: occl,
        }
    }

    /// Rendering-like image: a bright block on black background.
    fn block_rendering(res: usize, x0: usize, y0: usize, side: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut data = vec![0.0f64; 3 * res * res];
        for y in y0..(y0 + side).min(res) {
            for x in x0..(x0 + side).min(res) {
                for c in 0..3 {
                    data[c * res * res + y * res + x] = 0.6 + 0.4 * rng.random_range(0.0..1.0);
                }
            }
        }
        Tensor::from_vec(&[1, 3, res, res], data)
    }

    #[test]
    fn flow_loss_zero_for_identical_renderings_and_zero_flow() {
        let tape = Tape::new();
        let res = 16;
        let r = tape.constant(block_rendering(res, 4, 4, 8, 1));
        let ff1 = const_flow(&tape, res, 3, 0.0, 0.0);
        let ff2 = const_flow(&tape, res, 3, 0.0, 0.0);
        let l = flow_loss(&tape, &IdentityFeatures, r, r, &ff1, &ff2, 0, 0.0).unwrap();
        assert!(tape.value(l).item().abs() < 1e-6, "loss {}", tape.value(l).item());
    }

    #[test]
    fn flow_loss_prefers_true_translation() {
        // renderings displaced by a constant shift: the true flow scores
        // below zero flow
        let tape = Tape::new();
        let res = 16;
        let r_s = tape.constant(block_rendering(res, 3, 4, 8, 2));
        let r_t = tape.constant(block_rendering(res, 7, 4, 8, 2));
        // source feature at x maps to target at x: flow sampled at target
        // position points back... warp(phi_src, flow)[x] = phi_src[x + f]
        // and target block sits +4 in x, so f = -4 aligns them
        let true_ff = const_flow(&tape, res, 3, -4.0, 0.0);
        let true_rev = const_flow(&tape, res, 3, 4.0, 0.0);
        let zero_a = const_flow(&tape, res, 3, 0.0, 0.0);
        let zero_b = const_flow(&tape, res, 3, 0.0, 0.0);
        let l_true = flow_loss(&tape, &IdentityFeatures, r_s, r_t, &true_ff, &true_rev, 0, 0.0)
            .unwrap();
        let l_zero =
            flow_loss(&tape, &IdentityFeatures, r_s, r_t, &zero_a, &zero_b, 0, 0.0).unwrap();
        let (vt, vz) = (tape.value(l_true).item(), tape.value(l_zero).item());
        assert!(vt < vz, "true flow {vt} vs zero flow {vz}");
        assert!(vt >= 0.0 && vz >= 0.0, "nonnegative");
    }

    #[test]
    fn flow_loss_regularizer_nonnegative_and_active() {
        let tape = Tape::new();
        let res = 16;
        let r = tape.constant(block_rendering(res, 4, 4, 8, 3));
        // non-constant flow: ramp in x
        let mut flows = Vec::new();
        let mut occl = Vec::new();
        for s in 0..3usize {
            let rr = res >> s;
            let mut data = vec![0.0f64; 2 * rr * rr];
            for y in 0..rr {
                for x in 0..rr {
                    data[y * rr + x] = x as f64 * 0.1;
                }
            }
            flows.push(tape.constant(Tensor::from_vec(&[1, 2, rr, rr], data)));
            occl.push(tape.constant(Tensor::full(&[1, 1, rr, rr], 1.0)));
        }
        let ramp = FlowField {
            flows,
            occlusions: occl,
        };
        let zero = const_flow(&tape, res, 3, 0.0, 0.0);
        let with_reg =
            flow_loss(&tape, &IdentityFeatures, r, r, &ramp, &zero, 0, 0.5).unwrap();
        let without =
            flow_loss(&tape, &IdentityFeatures, r, r, &ramp, &zero, 0, 0.0).unwrap();
        assert!(tape.value(with_reg).item() > tape.value(without).item());
    }

    fn gen_cfg() -> GeneratorConfig {
        GeneratorConfig {
            resolution: 16,
            base_width: 4,
            scales: 2,
            spectral_norm: false,
            seed: 11,
        }
    }

    #[test]
    fn adversarial_uninformative_discriminator_analytic() {
        // zero weights and biases make the logits exactly 0: p = 0.5,
        // L_D = 2 ln 2, L_G = ln 2
        let mut d = Discriminator::new(&gen_cfg(), true);
        let names: Vec<String> = d.store.entries().iter().map(|e| e.name.clone()).collect();
        for name in names {
            let id = d.store.id_of(&name).unwrap();
            let shape = d.store.value(id).shape().to_vec();
            d.store.set_value(id, Tensor::zeros(&shape));
        }
        let tape = Tape::new();
        let sd = Session::new(&tape, &d.store, false);
        let i_s = tape.constant(batch_img(1, 16));
        let r_s = tape.constant(batch_img(2, 16));
        let i_t = tape.constant(batch_img(3, 16));
        let r_t = tape.constant(batch_img(4, 16));
        let (l_d, l_g) = adversarial_losses(&sd, &d, i_t, r_t, i_s, r_s);
        let ln2 = std::f64::consts::LN_2;
        assert!((tape.value(l_d).item() - 2.0 * ln2).abs() < 1e-12);
        assert!((tape.value(l_g).item() - ln2).abs() < 1e-12);
    }

    #[test]
    fn adversarial_confident_correct_discriminator_near_zero() {
        // positive-sum kernels + strongly signed inputs saturate the
        // clamped probabilities
        let mut d = Discriminator::new(&gen_cfg(), true);
        let names: Vec<String> = d.store.entries().iter().map(|e| e.name.clone()).collect();
        for name in names {
            let id = d.store.id_of(&name).unwrap();
            let shape = d.store.value(id).shape().to_vec();
            if name.ends_with(".w") {
                d.store.set_value(id, Tensor::full(&shape, 0.05));
            } else {
                d.store.set_value(id, Tensor::zeros(&shape));
            }
        }
        let tape = Tape::new();
        let sd = Session::new(&tape, &d.store, false);
        let real = tape.constant(Tensor::full(&[1, 3, 16, 16], 1000.0));
        let fake = tape.constant(Tensor::full(&[1, 3, 16, 16], -1000.0));
        let ren = tape.constant(Tensor::zeros(&[1, 3, 16, 16]));
        let (l_d, _) = adversarial_losses(&sd, &d, fake, ren, real, ren);
        assert!(tape.value(l_d).item() < 1e-5, "L_D {}", tape.value(l_d).item());
    }

    #[test]
    fn adversarial_g_gradient_matches_finite_differences() {
        let d = Discriminator::new(&gen_cfg(), true);
        let img0 = rand_img(7, 3, 16);
        let ren = rand_img(8, 3, 16);
        let eval = |img: &Tensor| -> f64 {
            let tape = Tape::new();
            let sd = Session::new(&tape, &d.store, false);
            let iv = tape.constant(img.reshaped(&[1, 3, 16, 16]));
            let rv = tape.constant(ren.reshaped(&[1, 3, 16, 16]));
            let l = adversarial_g_loss(&sd, &d, iv, rv);
            tape.value(l).item()
        };
        let tape = Tape::new();
        let sd = Session::new(&tape, &d.store, false);
        let iv = tape.leaf(img0.reshaped(&[1, 3, 16, 16]));
        let rv = tape.constant(ren.reshaped(&[1, 3, 16, 16]));
        let l = adversarial_g_loss(&sd, &d, iv, rv);
        let grads = tape.backward(l);
        let g = grads.get(iv).unwrap().clone();
        let h = 1e-6;
        for c in [0usize, 100, 381, 600, 767] {
            let mut p = img0.clone();
            p.data_mut()[c] += h;
            let mut m = img0.clone();
            m.data_mut()[c] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            let an = g.data()[c];
            let denom = fd.abs().max(an.abs()).max(1e-10);
            assert!(((fd - an) / denom).abs() < 1e-3, "pixel {c}: {fd} vs {an}");
        }
    }

    #[test]
    fn pose_loss_oracle() {
        let tape = Tape::new();
        let k = NUM_JOINTS;
        let identity_flat: Vec<f64> = (0..k)
            .flat_map(|_| Mat3::identity().flat().to_vec())
            .collect();
        let a = tape.constant(Tensor::from_vec(&[k, 9], identity_flat.clone()));
        let zero = pose_loss(&tape, a, a).unwrap();
        assert_eq!(tape.value(zero).item(), 0.0);

        // one joint rotated 90 deg about z, others identical
        // oracle = explicit matrix subtraction
        let rz = axis_angle_to_matrix([0.0, 0.0, std::f64::consts::FRAC_PI_2]).unwrap();
        let mut other = identity_flat.clone();
        other[..9].copy_from_slice(&rz.flat());
        let b = tape.constant(Tensor::from_vec(&[k, 9], other.clone()));
        let l_ab = pose_loss(&tape, a, b).unwrap();
        let l_ba = pose_loss(&tape, b, a).unwrap();
        let expect: f64 = identity_flat
            .iter()
            .zip(other.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / (9 * k) as f64;
        assert!((tape.value(l_ab).item() - expect).abs() < 1e-12);
        assert!((tape.value(l_ab).item() - tape.value(l_ba).item()).abs() < 1e-15);
        // the rotated joint contributes |1| * 4 entries over its 9
        assert!((expect - 4.0 / (9.0 * k as f64)).abs() < 1e-12);

        // joint-count mismatch
        let short = tape.constant(Tensor::zeros(&[k - 1, 9]));
        assert!(pose_loss(&tape, a, short).is_err());
    }

    #[test]
    fn shape_loss_oracle_and_gradient() {
        let tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(&[1, 4]));
        let ones = tape.leaf(Tensor::ones(&[1, 4]));
        let l = shape_loss(&tape, zero, ones).unwrap();
        assert!((tape.value(l).item() - 1.0).abs() < 1e-15);

        // subgradient: +-1/|beta| per coordinate
        let grads = tape.backward(l);
        let g = grads.get(ones).unwrap();
        for &gi in g.data() {
            assert!((gi - 0.25).abs() < 1e-15);
        }

        // equal inputs -> 0, and gradient only flows to the estimate
        let tape2 = Tape::new();
        let a = tape2.leaf(Tensor::from_vec(&[1, 4], vec![0.3, -0.5, 0.2, 0.9]));
        let b = tape2.leaf(Tensor::from_vec(&[1, 4], vec![0.5, -0.1, 0.0, 0.4]));
        let l2 = shape_loss(&tape2, a, b).unwrap();
        let g2 = tape2.backward(l2);
        assert!(g2.get(a).is_none(), "source estimate is detached");
        assert!(g2.get(b).is_some());

        let mism = tape2.constant(Tensor::zeros(&[1, 3]));
        assert!(shape_loss(&tape2, a, mism).is_err());
    }

    fn square_mask(res: usize, x0: usize, y0: usize, side: usize) -> SegmentMask {
        let mut mask = vec![0.0f64; res * res];
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                mask[y * res + x] = 1.0;
            }
        }
        SegmentMask {
            mask,
            segment: Segment::FrontTorso,
            width: res,
            height: res,
        }
    }

    #[test]
    fn extract_patch_full_and_square() {
        let tape = Tape::new();
        let res = 16;
        // full-image mask resamples the whole image
        let img = rand_img(21, 3, res);
        let iv = tape.constant(img.clone());
        let full = square_mask(res, 0, 0, res);
        let p = extract_patch(&tape, iv, &full, res).unwrap();
        let got = tape.value(p.patch);
        for (a, b) in got.data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p.mask.data().iter().all(|&v| v == 1.0));

        // constant-colour 10x10 square -> constant patch, all-ones mask
        let mut const_img = Tensor::zeros(&[3, res, res]);
        {
            let d = const_img.data_mut();
            for y in 3..13 {
                for x in 2..12 {
                    d[y * res + x] = 0.7;
                    d[res * res + y * res + x] = 0.2;
                    d[2 * res * res + y * res + x] = 0.9;
                }
            }
        }
        let cv = tape.constant(const_img);
        let sq = square_mask(res, 2, 3, 10);
        let p2 = extract_patch(&tape, cv, &sq, 8).unwrap();
        let got2 = tape.value(p2.patch);
        assert!(p2.mask.data().iter().all(|&v| v == 1.0));
        for i in 0..64 {
            assert!((got2.data()[i] - 0.7).abs() < 1e-9, "patch not constant");
        }

        // invariant: patch is 0 wherever mask is 0
        let part = square_mask(res, 0, 0, 6);
        let p3 = extract_patch(&tape, iv, &part, 12).unwrap();
        let got3 = tape.value(p3.patch);
        for i in 0..12 * 12 {
            if p3.mask.data()[i] == 0.0 {
                for c in 0..3 {
                    assert_eq!(got3.data()[c * 144 + i], 0.0);
                }
            }
        }

        // empty mask yields None
        let empty = SegmentMask {
            mask: vec![0.0; res * res],
            segment: Segment::BackTorso,
            width: res,
            height: res,
        };
        assert!(extract_patch(&tape, iv, &empty, 8).is_none());
    }

    #[test]
    fn appearance_core_oracles() {
        let tape = Tape::new();
        let size = 8;
        // identical patches and masks -> 0
        let p = tape.constant(rand_img(31, 3, size));
        let m = Tensor::ones(&[size, size]);
        let same = appearance_core(&tape, &IdentityFeatures, p, &m, p, &m, 0.01, 10.0).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);

        // all-zero masks -> 0
        let q = tape.constant(rand_img(32, 3, size));
        let mz = Tensor::zeros(&[size, size]);
        let z = appearance_core(&tape, &IdentityFeatures, p, &mz, q, &mz, 0.01, 10.0).unwrap();
        assert_eq!(tape.value(z).item(), 0.0);

        // two constant single-channel patches, full masks, identity layer:
        // lambda_a1 |c1-c2| + lambda_a2 |c1^2 - c2^2|
        let (c1, c2) = (0.8, 0.3);
        let p1 = tape.constant(Tensor::full(&[1, size, size], c1));
        let p2 = tape.constant(Tensor::full(&[1, size, size], c2));
        let (la1, la2) = (0.7, 2.0);
        let l = appearance_core(&tape, &IdentityFeatures, p1, &m, p2, &m, la1, la2).unwrap();
        let expect_final = la1 * (c1 - c2).abs() + la2 * (c1 * c1 - c2 * c2).abs();
        assert!(
            (tape.value(l).item() - expect_final).abs() < 1e-12,
            "{} vs {expect_final}",
            tape.value(l).item()
        );
    }

    #[test]
    fn appearance_weight_step_function() {
        let rot = |deg: f64| axis_angle_to_matrix([0.0, deg.to_radians(), 0.0]).unwrap();
        let id = Mat3::identity();
        // the pure step function is exact at the boundaries
        let cases = [
            (0.0, 1.0),
            (19.99, 1.0),
            (20.0, 0.1),
            (39.99, 0.1),
            (40.0, 0.01),
            (59.99, 0.01),
            (60.0, 0.0),
            (180.0, 0.0),
        ];
        for (deg, expect) in cases {
            assert_eq!(appearance_weight_from_angle(deg), expect, "angle {deg}");
        }
        // rotation-matrix form agrees away from the float-boundary zone
        for (deg, expect) in [(10.0, 1.0), (30.0, 0.1), (45.0, 0.01), (90.0, 0.0)] {
            assert_eq!(appearance_weight(&id, &rot(deg)), expect, "angle {deg}");
        }
    }

    #[test]
    fn appearance_loss_full_pipeline() {
        let template = Arc::new(build_default_template(&BodyConfig::default()).unwrap());
        let res = 32;
        let params = |yaw_deg: f64| {
            let mut p = repose_core::bodymodel::BodyParams::rest(&template);
            p.rotations[0] =
                axis_angle_to_matrix([0.0, (yaw_deg as f64).to_radians(), 0.0]).unwrap();
            p.camera = CameraParams {
                scale: 1.1,
                t: [0.0, 0.0],
            };
            p
        };
        let phi = ConvFeatures::new(ExtractorConfig {
            base_width: 4,
            seed: 9,
        });
        let w = LossWeights::default();

        // same params and image -> 0
        let tape = Tape::new();
        let img = tape.constant(rand_img(50, 3, res));
        let p0 = params(0.0);
        let l0 = appearance_loss(&tape, &phi, img, img, &p0, &p0, &template, &w, 8).unwrap();
        assert!(tape.value(l0).item().abs() < 1e-12);

        // pelvis delta over 60 degrees -> exactly zero regardless of images
        let other = tape.constant(rand_img(51, 3, res));
        let p_far = params(90.0);
        let lfar = appearance_loss(&tape, &phi, img, other, &p0, &p_far, &template, &w, 8).unwrap();
        assert_eq!(tape.value(lfar).item(), 0.0);

        // gradient flows into generated-image pixels inside the masks
        let tape2 = Tape::new();
        let i_s = tape2.constant(rand_img(52, 3, res));
        let i_hat = tape2.leaf(rand_img(53, 3, res));
        let p_t = params(10.0);
        let l = appearance_loss(&tape2, &phi, i_s, i_hat, &p0, &p_t, &template, &w, 8).unwrap();
        assert!(tape2.value(l).item() > 0.0);
        let grads = tape2.backward(l);
        let g = grads.get(i_hat).unwrap();
        assert!(g.max_abs() > 0.0, "no gradient into generated image");
    }

    #[test]
    fn total_loss_weighted_sum_oracle() {
        let tape = Tape::new();
        let mk = |v: f64| tape.constant(Tensor::scalar(v));
        let inputs = TotalLossInputs {
            cycle: mk(0.0),
            flow: mk(0.0),
            adversarial_g: mk(0.0),
            pose: mk(0.0),
            shape: mk(0.0),
            appearance: mk(0.0),
        };
        let w = LossWeights::default();
        let (total, bd) = total_loss(&tape, &inputs, &w);
        assert_eq!(tape.value(total).item(), 0.0);
        assert_eq!(bd.total, 0.0);

        // random components against an independent weighted-sum oracle
        let vals = [0.37, 1.22, 0.05, 2.4, 0.9, 0.013];
        let inputs = TotalLossInputs {
            cycle: mk(vals[0]),
            flow: mk(vals[1]),
            adversarial_g: mk(vals[2]),
            pose: mk(vals[3]),
            shape: mk(vals[4]),
            appearance: mk(vals[5]),
        };
        let (total, bd) = total_loss(&tape, &inputs, &w);
        let oracle = w.alpha_cycle * vals[0]
            + w.alpha_flow * vals[1]
            + w.alpha_adv * vals[2]
            + w.alpha_pose * vals[3]
            + w.alpha_shape * vals[4]
            + w.alpha_app * vals[5];
        assert!((tape.value(total).item() - oracle).abs() < 1e-12);
        assert!((bd.total - oracle).abs() < 1e-12);

        // zeroing one alpha removes exactly that term
        let mut w2 = w.clone();
        w2.alpha_pose = 0.0;
        let (t2, _) = total_loss(&tape, &inputs, &w2);
        let expect = oracle - w.alpha_pose * vals[3];
        assert!((tape.value(t2).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn generator_losses_compose_end_to_end() {
        // smoke: build the full generator objective graph on tiny inputs
        // and check every term is finite with gradients flowing to G
        let cfg = GeneratorConfig {
            resolution: 16,
            base_width: 4,
            scales: 2,
            spectral_norm: true,
            seed: 3,
        };
        let g = Generator::new(cfg.clone()).unwrap();
        let d = Discriminator::new(&cfg, true);
        let phi = ConvFeatures::new(ExtractorConfig {
            base_width: 4,
            seed: 10,
        });
        let tape = Tape::new();
        let sg = Session::new(&tape, &g.store, true);
        let sd = Session::new(&tape, &d.store, false);
        let i_s = tape.constant(rand_img(60, 3, 16).reshaped(&[1, 3, 16, 16]));
        let r_s = tape.constant(block_rendering(16, 2, 2, 10, 61));
        let r_t = tape.constant(block_rendering(16, 5, 3, 10, 62));
        let h_s = tape.constant(rand_img(63, NUM_JOINTS, 16).reshaped(&[1, NUM_JOINTS, 16, 16]));
        let h_t = tape.constant(rand_img(64, NUM_JOINTS, 16).reshaped(&[1, NUM_JOINTS, 16, 16]));

        let (i_hat_t, ff_st) = g.generate(&sg, i_s, h_s, r_s, h_t).unwrap();
        let (i_hat_s, ff_ts) = g.generate(&sg, i_hat_t, h_t, r_t, h_s).unwrap();

        let w = LossWeights::default();
        let cyc = cycle_loss(&tape, &phi, i_s, i_hat_s, &w).unwrap();
        let fl = flow_loss(&tape, &phi, r_s, r_t, &ff_st, &ff_ts, 1, 0.01).unwrap();
        let adv_g = adversarial_g_loss(&sd, &d, i_hat_t, r_t);
        let (total, bd) = total_loss(
            &tape,
            &TotalLossInputs {
                cycle: cyc,
                flow: fl,
                adversarial_g: adv_g,
                pose: tape.constant(Tensor::scalar(0.0)),
                shape: tape.constant(Tensor::scalar(0.0)),
                appearance: tape.constant(Tensor::scalar(0.0)),
            },
            &w,
        );
        assert!(bd.total.is_finite());
        let grads = tape.backward(total);
        let collected = sg.collect_grads(&grads);
        let nonzero = collected.iter().filter(|(_, g)| g.max_abs() > 0.0).count();
        assert!(nonzero > collected.len() / 2, "gradients reach the generator");
    }
}
