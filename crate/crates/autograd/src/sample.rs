//! Differentiable bilinear sampling: flow warping and ROI resampling.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Bilinear taps for a sample point in pixel-index space with border clamp.
/// Returns ((x0,x1,fx,inside_x), (y0,y1,fy,inside_y)).
fn taps(s: f64, size: usize) -> (usize, usize, f64, bool) {
    let max = (size - 1) as f64;
    let sc = s.clamp(0.0, max);
    let i0 = (sc.floor() as usize).min(size - 1);
    let i1 = (i0 + 1).min(size - 1);
    let f = sc - i0 as f64;
    // strictly inside -> clamp derivative is 1
    let inside = s > 0.0 && s < max;
    (i0, i1, f, inside)
}

/// Warp features by a per-pixel displacement field.
///
/// `features` is (n,c,h,w), `flow` is (n,2,h,w) holding (dx, dy) in pixels.
/// out[n,c,y,x] samples features at (x + dx, y + dy), clamped to the border.
pub fn warp_bilinear(tape: &Tape, features: Var, flow: Var) -> Var {
    let vf = tape.value(features);
    let vw = tape.value(flow);
    let s = vf.shape().to_vec();
    assert_eq!(s.len(), 4);
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    assert_eq!(vw.shape(), &[n, 2, h, w], "flow shape mismatch");

    let feat = vf.data();
    let fl = vw.data();
    let plane = h * w;
    let mut out = vec![0.0f64; n * c * plane];
    for ni in 0..n {
        let fx_base = ni * 2 * plane;
        let fy_base = fx_base + plane;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let sx = x as f64 + fl[fx_base + p];
                let sy = y as f64 + fl[fy_base + p];
                let (x0, x1, fx, _) = taps(sx, w);
                let (y0, y1, fy, _) = taps(sy, h);
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let v00 = feat[base + y0 * w + x0];
                    let v01 = feat[base + y0 * w + x1];
                    let v10 = feat[base + y1 * w + x0];
                    let v11 = feat[base + y1 * w + x1];
                    out[base + p] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                        + fy * ((1.0 - fx) * v10 + fx * v11);
                }
            }
        }
    }

    tape.op(
        &[features, flow],
        Tensor::from_vec(&[n, c, h, w], out),
        Box::new(move |g, pv, _| {
            let (vf, vw) = (pv[0], pv[1]);
            let feat = vf.data();
            let fl = vw.data();
            let gd = g.data();
            let mut gfeat = vec![0.0f64; vf.len()];
            let mut gflow = vec![0.0f64; vw.len()];
            for ni in 0..n {
                let fx_base = ni * 2 * plane;
                let fy_base = fx_base + plane;
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        let sx = x as f64 + fl[fx_base + p];
                        let sy = y as f64 + fl[fy_base + p];
                        let (x0, x1, fx, in_x) = taps(sx, w);
                        let (y0, y1, fy, in_y) = taps(sy, h);
                        let mut d_sx = 0.0;
                        let mut d_sy = 0.0;
                        for ci in 0..c {
                            let base = (ni * c + ci) * plane;
                            let go = gd[base + p];
                            if go == 0.0 {
                                continue;
                            }
                            let v00 = feat[base + y0 * w + x0];
                            let v01 = feat[base + y0 * w + x1];
                            let v10 = feat[base + y1 * w + x0];
                            let v11 = feat[base + y1 * w + x1];
                            gfeat[base + y0 * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                            gfeat[base + y0 * w + x1] += go * (1.0 - fy) * fx;
                            gfeat[base + y1 * w + x0] += go * fy * (1.0 - fx);
                            gfeat[base + y1 * w + x1] += go * fy * fx;
                            d_sx += go * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                            d_sy += go * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                        }
                        if in_x {
                            gflow[fx_base + p] = d_sx;
                        }
                        if in_y {
                            gflow[fy_base + p] = d_sy;
                        }
                    }
                }
            }
            vec![
                Tensor::from_vec(vf.shape(), gfeat),
                Tensor::from_vec(vw.shape(), gflow),
            ]
        }),
    )
}

/// Resample a continuous bounding box of an image to a square patch.
///
/// `img` is (c,h,w); `bbox` is (x0, y0, x1, y1) in continuous pixel
/// coordinates (pixel centres at i+0.5). Output is (c,size,size).
/// Differentiable with respect to the image; the box is fixed.
pub fn roi_resample(tape: &Tape, img: Var, bbox: [f64; 4], size: usize) -> Var {
    let vi = tape.value(img);
    let s = vi.shape().to_vec();
    assert_eq!(s.len(), 3);
    let (c, h, w) = (s[0], s[1], s[2]);
    let [bx0, by0, bx1, by1] = bbox;
    assert!(bx1 > bx0 && by1 > by0, "degenerate bbox {bbox:?}");
    let sx_step = (bx1 - bx0) / size as f64;
    let sy_step = (by1 - by0) / size as f64;

    // sample position for output (i,j); -0.5 converts centre coords to index space
    let pos = move |i: usize, j: usize| -> (f64, f64) {
        (
            bx0 + (j as f64 + 0.5) * sx_step - 0.5,
            by0 + (i as f64 + 0.5) * sy_step - 0.5,
        )
    };

    let src = vi.data();
    let mut out = vec![0.0f64; c * size * size];
    for i in 0..size {
        for j in 0..size {
            let (sx, sy) = pos(i, j);
            let (x0, x1, fx, _) = taps(sx, w);
            let (y0, y1, fy, _) = taps(sy, h);
            for ci in 0..c {
                let base = ci * h * w;
                let v = (1.0 - fy)
                    * ((1.0 - fx) * src[base + y0 * w + x0] + fx * src[base + y0 * w + x1])
                    + fy * ((1.0 - fx) * src[base + y1 * w + x0] + fx * src[base + y1 * w + x1]);
                out[(ci * size + i) * size + j] = v;
            }
        }
    }

    tape.op(
        &[img],
        Tensor::from_vec(&[c, size, size], out),
        Box::new(move |g, pv, _| {
            let vi = pv[0];
            let gd = g.data();
            let mut gx = vec![0.0f64; vi.len()];
            for i in 0..size {
                for j in 0..size {
                    let (sx, sy) = pos(i, j);
                    let (x0, x1, fx, _) = taps(sx, w);
                    let (y0, y1, fy, _) = taps(sy, h);
                    for ci in 0..c {
                        let base = ci * h * w;
                        let go = gd[(ci * size + i) * size + j];
                        gx[base + y0 * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                        gx[base + y0 * w + x1] += go * (1.0 - fy) * fx;
                        gx[base + y1 * w + x0] += go * fy * (1.0 - fx);
                        gx[base + y1 * w + x1] += go * fy * fx;
                    }
                }
            }
            vec![Tensor::from_vec(vi.shape(), gx)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{mul, sum};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_flow_is_identity() {
        let t = Tape::new();
        let f = t.constant(Tensor::from_vec(
            &[1, 1, 2, 3],
            vec![1., 2., 3., 4., 5., 6.],
        ));
        let flow = t.constant(Tensor::zeros(&[1, 2, 2, 3]));
        let y = warp_bilinear(&t, f, flow);
        assert_eq!(t.value(y).data(), &[1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn unit_flow_shifts_ramp() {
        // ramp in x; +1 px flow in x samples the next column
        let t = Tape::new();
        let w = 5;
        let ramp: Vec<f64> = (0..w).map(|x| x as f64).collect();
        let f = t.constant(Tensor::from_vec(&[1, 1, 1, w], ramp));
        let mut flow = vec![0.0f64; 2 * w];
        for v in flow.iter_mut().take(w) {
            *v = 1.0;
        }
        let flow = t.constant(Tensor::from_vec(&[1, 2, 1, w], flow));
        let y = warp_bilinear(&t, f, flow);
        let out = t.value(y);
        // interior exact, border clamps
        assert_eq!(&out.data()[..w - 1], &[1., 2., 3., 4.]);
        assert_eq!(out.data()[w - 1], 4.0);
    }

    #[test]
    fn warp_grad_matches_fd() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 1;
        let (c, h, w) = (2, 5, 5);
        let feat0 = Tensor::from_vec(
            &[n, c, h, w],
            (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let flow0 = Tensor::from_vec(
            &[n, 2, h, w],
            (0..n * 2 * h * w).map(|_| rng.random_range(-1.3..1.3)).collect(),
        );
        let eval = |feat: &Tensor, flow: &Tensor| -> f64 {
            let t = Tape::new();
            let f = t.constant(feat.clone());
            let fl = t.constant(flow.clone());
            let y = warp_bilinear(&t, f, fl);
            let y2 = mul(&t, y, y);
            t.value(sum(&t, y2)).item()
        };
        let t = Tape::new();
        let f = t.leaf(feat0.clone());
        let fl = t.leaf(flow0.clone());
        let y = warp_bilinear(&t, f, fl);
        let y2 = mul(&t, y, y);
        let loss = sum(&t, y2);
        let grads = t.backward(loss);
        let h_ = 1e-6;
        for c_ in [0usize, 13, 30, 49] {
            let mut p = flow0.clone();
            p.data_mut()[c_] += h_;
            let mut m = flow0.clone();
            m.data_mut()[c_] -= h_;
            let fd = (eval(&feat0, &p) - eval(&feat0, &m)) / (2.0 * h_);
            let an = grads.get(fl).unwrap().data()[c_];
            assert!((fd - an).abs() / fd.abs().max(1.0) < 1e-4, "flow[{c_}] fd={fd} an={an}");
        }
        for c_ in [0usize, 7, 24, 44] {
            let mut p = feat0.clone();
            p.data_mut()[c_] += h_;
            let mut m = feat0.clone();
            m.data_mut()[c_] -= h_;
            let fd = (eval(&p, &flow0) - eval(&m, &flow0)) / (2.0 * h_);
            let an = grads.get(f).unwrap().data()[c_];
            assert!((fd - an).abs() / fd.abs().max(1.0) < 1e-4, "feat[{c_}] fd={fd} an={an}");
        }
    }

    #[test]
    fn roi_full_image_identity() {
        // full-image bbox at native size reproduces the image
        let t = Tape::new();
        let img = t.constant(Tensor::from_vec(&[1, 2, 2], vec![1., 2., 3., 4.]));
        let y = roi_resample(&t, img, [0.0, 0.0, 2.0, 2.0], 2);
        assert_eq!(t.value(y).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn roi_grad_matches_fd() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let img0 = Tensor::from_vec(
            &[2, 6, 6],
            (0..72).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let bbox = [1.2, 0.7, 4.9, 5.3];
        let eval = |img: &Tensor| -> f64 {
            let t = Tape::new();
            let iv = t.constant(img.clone());
            let y = roi_resample(&t, iv, bbox, 4);
            let y2 = mul(&t, y, y);
            t.value(sum(&t, y2)).item()
        };
        let t = Tape::new();
        let iv = t.leaf(img0.clone());
        let y = roi_resample(&t, iv, bbox, 4);
        let y2 = mul(&t, y, y);
        let grads = t.backward(sum(&t, y2));
        let h = 1e-6;
        for c in [0usize, 10, 30, 60] {
            let mut p = img0.clone();
            p.data_mut()[c] += h;
            let mut m = img0.clone();
            m.data_mut()[c] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            let an = grads.get(iv).unwrap().data()[c];
            assert!((fd - an).abs() < 1e-6, "img[{c}] fd={fd} an={an}");
        }
    }
}
