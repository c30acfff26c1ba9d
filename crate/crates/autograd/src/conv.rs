//! Convolution and pooling ops (NCHW layout), im2col + GEMM based.

use rayon::prelude::*;

use crate::gemm;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_out_size(h: usize, k: usize, spec: ConvSpec) -> usize {
    (h + 2 * spec.pad - k) / spec.stride + 1
}

/// Expand one image (c,h,w) into columns of shape (c*kh*kw, oh*ow).
fn im2col(
    src: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    col: &mut [f64],
) {
    let oh = conv_out_size(h, kh, spec);
    let ow = conv_out_size(w, kw, spec);
    let ncols = oh * ow;
    debug_assert_eq!(col.len(), c * kh * kw * ncols);
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ncols;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    let dst = row + oy * ow;
                    if iy < 0 || iy >= h as isize {
                        col[dst..dst + ow].fill(0.0);
                        continue;
                    }
                    let src_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        col[dst + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into an image; adjoint of [`im2col`].
fn col2im(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
    dst: &mut [f64],
) {
    let oh = conv_out_size(h, kh, spec);
    let ow = conv_out_size(w, kw, spec);
    let ncols = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ncols;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[dst_row + ix as usize] += col[src + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-d convolution: x (n,c,h,w), weight (o,c,kh,kw), bias (o) -> (n,o,oh,ow).
pub fn conv2d(tape: &Tape, x: Var, weight: Var, bias: Var, spec: ConvSpec) -> Var {
    let vx = tape.value(x);
    let vw = tape.value(weight);
    let vb = tape.value(bias);
    let (n, c, h, w) = dims4(&vx);
    let (o, cw, kh, kw) = dims4(&vw);
    assert_eq!(c, cw, "conv2d channel mismatch");
    assert_eq!(vb.len(), o, "conv2d bias size");
    let oh = conv_out_size(h, kh, spec);
    let ow = conv_out_size(w, kw, spec);
    let ncols = oh * ow;
    let krows = c * kh * kw;

    let mut out = vec![0.0f64; n * o * ncols];
    out.par_chunks_mut(o * ncols)
        .zip(vx.data().par_chunks(c * h * w))
        .for_each(|(dst, src)| {
            let mut col = vec![0.0f64; krows * ncols];
            im2col(src, c, h, w, kh, kw, spec, &mut col);
            gemm::gemm_into(o, krows, ncols, vw.data(), &col, dst);
            for (oc, chunk) in dst.chunks_mut(ncols).enumerate() {
                let b = vb.data()[oc];
                for v in chunk.iter_mut() {
                    *v += b;
                }
            }
        });

    tape.op(
        &[x, weight, bias],
        Tensor::from_vec(&[n, o, oh, ow], out),
        Box::new(move |g, pv, _| {
            let (vx, vw) = (pv[0], pv[1]);
            let gd = g.data();

            // per-sample pieces computed in parallel, reduced in batch order
            let pieces: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
                .into_par_iter()
                .map(|ni| {
                    let src = &vx.data()[ni * c * h * w..(ni + 1) * c * h * w];
                    let gout = &gd[ni * o * ncols..(ni + 1) * o * ncols];
                    let mut col = vec![0.0f64; krows * ncols];
                    im2col(src, c, h, w, kh, kw, spec, &mut col);
                    // dW_n = gout (o,ncols) . col^T (ncols,krows)
                    let mut dw = vec![0.0f64; o * krows];
                    gemm::gemm_nt_into(o, ncols, krows, gout, &col, &mut dw);
                    // dcol = W^T (krows,o) . gout (o,ncols)
                    let mut dcol = vec![0.0f64; krows * ncols];
                    gemm::gemm_tn_into(krows, o, ncols, vw.data(), gout, &mut dcol);
                    let mut dx = vec![0.0f64; c * h * w];
                    col2im(&dcol, c, h, w, kh, kw, spec, &mut dx);
                    let mut db = vec![0.0f64; o];
                    for (oc, chunk) in gout.chunks(ncols).enumerate() {
                        db[oc] = chunk.iter().sum();
                    }
                    (dx, dw, db)
                })
                .collect();

            let mut dx_all = vec![0.0f64; n * c * h * w];
            let mut dw_all = vec![0.0f64; o * krows];
            let mut db_all = vec![0.0f64; o];
            for (ni, (dx, dw, db)) in pieces.into_iter().enumerate() {
                dx_all[ni * c * h * w..(ni + 1) * c * h * w].copy_from_slice(&dx);
                for (acc, v) in dw_all.iter_mut().zip(dw.iter()) {
                    *acc += v;
                }
                for (acc, v) in db_all.iter_mut().zip(db.iter()) {
                    *acc += v;
                }
            }
            vec![
                Tensor::from_vec(&[n, c, h, w], dx_all),
                Tensor::from_vec(&[o, cw, kh, kw], dw_all),
                Tensor::from_vec(&[o], db_all),
            ]
        }),
    )
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected 4-d tensor, got {:?}", s);
    (s[0], s[1], s[2], s[3])
}

/// Average pooling with square window = stride = `factor`.
pub fn avg_pool2d(tape: &Tape, x: Var, factor: usize) -> Var {
    if factor == 1 {
        return x;
    }
    let vx = tape.value(x);
    let (n, c, h, w) = dims4(&vx);
    assert!(h % factor == 0 && w % factor == 0, "pool factor must divide size");
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let src = vx.data();
    let mut out = vec![0.0f64; n * c * oh * ow];
    for nc in 0..n * c {
        let sbase = nc * h * w;
        let dbase = nc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..factor {
                    let row = sbase + (oy * factor + dy) * w + ox * factor;
                    for dx in 0..factor {
                        acc += src[row + dx];
                    }
                }
                out[dbase + oy * ow + ox] = acc * inv;
            }
        }
    }
    tape.op(
        &[x],
        Tensor::from_vec(&[n, c, oh, ow], out),
        Box::new(move |g, pv, _| {
            let mut gx = vec![0.0f64; pv[0].len()];
            let gd = g.data();
            for nc in 0..n * c {
                let sbase = nc * h * w;
                let dbase = nc * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = gd[dbase + oy * ow + ox] * inv;
                        for dy in 0..factor {
                            let row = sbase + (oy * factor + dy) * w + ox * factor;
                            for dx in 0..factor {
                                gx[row + dx] += gv;
                            }
                        }
                    }
                }
            }
            vec![Tensor::from_vec(pv[0].shape(), gx)]
        }),
    )
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2(tape: &Tape, x: Var) -> Var {
    let vx = tape.value(x);
    let (n, c, h, w) = dims4(&vx);
    let (oh, ow) = (h * 2, w * 2);
    let src = vx.data();
    let mut out = vec![0.0f64; n * c * oh * ow];
    for nc in 0..n * c {
        let sbase = nc * h * w;
        let dbase = nc * oh * ow;
        for y in 0..h {
            for x_ in 0..w {
                let v = src[sbase + y * w + x_];
                let d = dbase + 2 * y * ow + 2 * x_;
                out[d] = v;
                out[d + 1] = v;
                out[d + ow] = v;
                out[d + ow + 1] = v;
            }
        }
    }
    tape.op(
        &[x],
        Tensor::from_vec(&[n, c, oh, ow], out),
        Box::new(move |g, pv, _| {
            let mut gx = vec![0.0f64; pv[0].len()];
            let gd = g.data();
            for nc in 0..n * c {
                let sbase = nc * h * w;
                let dbase = nc * oh * ow;
                for y in 0..h {
                    for x_ in 0..w {
                        let d = dbase + 2 * y * ow + 2 * x_;
                        gx[sbase + y * w + x_] = gd[d] + gd[d + 1] + gd[d + ow] + gd[d + ow + 1];
                    }
                }
            }
            vec![Tensor::from_vec(pv[0].shape(), gx)]
        }),
    )
}

/// Mean over the spatial dims: (n,c,h,w) -> (n,c).
pub fn mean_spatial(tape: &Tape, x: Var) -> Var {
    let vx = tape.value(x);
    let (n, c, h, w) = dims4(&vx);
    let inv = 1.0 / (h * w) as f64;
    let src = vx.data();
    let mut out = vec![0.0f64; n * c];
    for (nc, item) in out.iter_mut().enumerate() {
        *item = src[nc * h * w..(nc + 1) * h * w].iter().sum::<f64>() * inv;
    }
    tape.op(
        &[x],
        Tensor::from_vec(&[n, c], out),
        Box::new(move |g, pv, _| {
            let mut gx = vec![0.0f64; pv[0].len()];
            let gd = g.data();
            for nc in 0..n * c {
                let gv = gd[nc] * inv;
                gx[nc * h * w..(nc + 1) * h * w].fill(gv);
            }
            vec![Tensor::from_vec(pv[0].shape(), gx)]
        }),
    )
}
