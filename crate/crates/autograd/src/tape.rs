//! Reverse-mode autodiff tape.
//!
//! A [`Tape`] records every operation of a forward pass in topological
//! order. [`Tape::backward`] walks the record in reverse and accumulates
//! gradients. Tapes are cheap to build and are dropped after each
//! training step; values are immutable [`Tensor`]s.

use std::cell::RefCell;

use crate::tensor::{broadcast_shape, reduce_to_shape, zip_broadcast, Tensor};

/// Handle to a node on a tape. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    needs_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by one backward pass, indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that participates in differentiation.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, vec![], true, None)
    }

    /// Leaf treated as a constant; no gradient flows to or through it
    /// unless a differentiable parent requires it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, vec![], false, None)
    }

    pub fn value(&self, var: Var) -> Tensor {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.shape().to_vec()
    }

    fn push(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        needs_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            needs_grad,
            backward,
        });
        Var(nodes.len() - 1)
    }

    /// Record an op. `backward(grad_out, parent_values, out_value)` must
    /// return one gradient tensor per parent, each parent-shaped.
    pub fn op(&self, parents: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let needs = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].needs_grad)
        };
        let parent_ids: Vec<usize> = parents.iter().map(|p| p.0).collect();
        if needs {
            self.push(value, parent_ids, true, Some(backward))
        } else {
            self.push(value, parent_ids, false, None)
        }
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[output.0].value.len(),
            1,
            "backward() requires a scalar output"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.0] = Some(Tensor::ones(nodes[output.0].value.shape()));
        for idx in (0..=output.0).rev() {
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(backward) = &node.backward else {
                // leaf: keep its gradient
                grads[idx] = Some(grad_out);
                continue;
            };
            let parent_vals: Vec<&Tensor> =
                node.parents.iter().map(|&p| &nodes[p].value).collect();
            let parent_grads = backward(&grad_out, &parent_vals, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pid, pg) in node.parents.iter().zip(parent_grads.into_iter()) {
                if !nodes[pid].needs_grad {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    nodes[pid].value.shape(),
                    "gradient shape mismatch for parent {pid}"
                );
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

fn binary_broadcast(
    tape: &Tape,
    a: Var,
    b: Var,
    f: impl Fn(f64, f64) -> f64 + 'static,
    dfa: impl Fn(f64, f64) -> f64 + 'static,
    dfb: impl Fn(f64, f64) -> f64 + 'static,
) -> Var {
    let va = tape.value(a);
    let vb = tape.value(b);
    broadcast_shape(va.shape(), vb.shape())
        .unwrap_or_else(|| panic!("shapes {:?} and {:?} do not broadcast", va.shape(), vb.shape()));
    let out = zip_broadcast(&va, &vb, &f);
    tape.op(
        &[a, b],
        out,
        Box::new(move |g, pv, _| {
            let (va, vb) = (pv[0], pv[1]);
            let ga_full = {
                let d = zip_broadcast(va, vb, &dfa);
                zip_broadcast(g, &d, |x, y| x * y)
            };
            let gb_full = {
                let d = zip_broadcast(va, vb, &dfb);
                zip_broadcast(g, &d, |x, y| x * y)
            };
            vec![
                reduce_to_shape(&ga_full, va.shape()),
                reduce_to_shape(&gb_full, vb.shape()),
            ]
        }),
    )
}

fn unary(
    tape: &Tape,
    a: Var,
    f: impl Fn(f64) -> f64 + 'static,
    df: impl Fn(f64, f64) -> f64 + 'static, // (x, y) -> dy/dx
) -> Var {
    let va = tape.value(a);
    let out = va.map(&f);
    tape.op(
        &[a],
        out,
        Box::new(move |g, pv, out| {
            let x = pv[0];
            let mut gx = Vec::with_capacity(x.len());
            for i in 0..x.len() {
                gx.push(g.data()[i] * df(x.data()[i], out.data()[i]));
            }
            vec![Tensor::from_vec(x.shape(), gx)]
        }),
    )
}

pub fn add(tape: &Tape, a: Var, b: Var) -> Var {
    binary_broadcast(tape, a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
}

pub fn sub(tape: &Tape, a: Var, b: Var) -> Var {
    binary_broadcast(tape, a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
}

pub fn mul(tape: &Tape, a: Var, b: Var) -> Var {
    binary_broadcast(tape, a, b, |x, y| x * y, |_, y| y, |x, _| x)
}

pub fn div(tape: &Tape, a: Var, b: Var) -> Var {
    binary_broadcast(
        tape,
        a,
        b,
        |x, y| x / y,
        |_, y| 1.0 / y,
        |x, y| -x / (y * y),
    )
}

pub fn neg(tape: &Tape, a: Var) -> Var {
    unary(tape, a, |x| -x, |_, _| -1.0)
}

pub fn abs(tape: &Tape, a: Var) -> Var {
    unary(tape, a, f64::abs, |x, _| if x >= 0.0 { 1.0 } else { -1.0 })
}

pub fn relu(tape: &Tape, a: Var) -> Var {
    unary(tape, a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
}

pub fn leaky_relu(tape: &Tape, a: Var, slope: f64) -> Var {
    unary(
        tape,
        a,
        move |x| if x > 0.0 { x } else { slope * x },
        move |x, _| if x > 0.0 { 1.0 } else { slope },
    )
}

pub fn sigmoid(tape: &Tape, a: Var) -> Var {
    unary(
        tape,
        a,
        |x| 1.0 / (1.0 + (-x).exp()),
        |_, y| y * (1.0 - y),
    )
}

pub fn exp(tape: &Tape, a: Var) -> Var {
    unary(tape, a, f64::exp, |_, y| y)
}

pub fn ln(tape: &Tape, a: Var) -> Var {
    unary(tape, a, f64::ln, |x, _| 1.0 / x)
}

pub fn sqrt(tape: &Tape, a: Var) -> Var {
    unary(tape, a, f64::sqrt, |_, y| 0.5 / y)
}

/// Arc cosine with the argument clamped away from +-1 so the gradient
/// stays finite.
pub fn acos_safe(tape: &Tape, a: Var) -> Var {
    const LIM: f64 = 1.0 - 1e-7;
    unary(
        tape,
        a,
        |x| x.clamp(-LIM, LIM).acos(),
        |x, _| {
            let xc = x.clamp(-LIM, LIM);
            if x.abs() >= LIM {
                0.0
            } else {
                -1.0 / (1.0 - xc * xc).sqrt()
            }
        },
    )
}

/// Clamp with zero gradient outside [lo, hi].
pub fn clamp(tape: &Tape, a: Var, lo: f64, hi: f64) -> Var {
    unary(
        tape,
        a,
        move |x| x.clamp(lo, hi),
        move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
    )
}

pub fn scale(tape: &Tape, a: Var, c: f64) -> Var {
    unary(tape, a, move |x| c * x, move |_, _| c)
}

pub fn add_scalar(tape: &Tape, a: Var, c: f64) -> Var {
    unary(tape, a, move |x| x + c, |_, _| 1.0)
}

/// Cut the graph: value passes through, gradient does not.
pub fn detach(tape: &Tape, a: Var) -> Var {
    tape.constant(tape.value(a))
}

// ---------------------------------------------------------------------------
// reductions and shape ops
// ---------------------------------------------------------------------------

pub fn sum(tape: &Tape, a: Var) -> Var {
    let va = tape.value(a);
    let s = va.sum();
    tape.op(
        &[a],
        Tensor::scalar(s),
        Box::new(|g, pv, _| {
            let go = g.item();
            vec![Tensor::full(pv[0].shape(), go)]
        }),
    )
}

pub fn mean(tape: &Tape, a: Var) -> Var {
    let n = tape.value(a).len() as f64;
    let s = sum(tape, a);
    scale(tape, s, 1.0 / n)
}

/// Sum along one axis, keeping it as size 1.
pub fn sum_axis(tape: &Tape, a: Var, axis: usize) -> Var {
    let va = tape.value(a);
    let shape = va.shape().to_vec();
    assert!(axis < shape.len());
    let mut out_shape = shape.clone();
    out_shape[axis] = 1;
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0f64; outer * inner];
    let src = va.data();
    for o in 0..outer {
        for m in 0..mid {
            let base = (o * mid + m) * inner;
            let obase = o * inner;
            for i in 0..inner {
                out[obase + i] += src[base + i];
            }
        }
    }
    tape.op(
        &[a],
        Tensor::from_vec(&out_shape, out),
        Box::new(move |g, pv, _| {
            let mut gx = vec![0.0f64; pv[0].len()];
            let gd = g.data();
            for o in 0..outer {
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    let obase = o * inner;
                    for i in 0..inner {
                        gx[base + i] = gd[obase + i];
                    }
                }
            }
            vec![Tensor::from_vec(pv[0].shape(), gx)]
        }),
    )
}

pub fn reshape(tape: &Tape, a: Var, shape: &[usize]) -> Var {
    let va = tape.value(a);
    let out = va.reshaped(shape);
    tape.op(
        &[a],
        out,
        Box::new(|g, pv, _| vec![g.reshaped(pv[0].shape())]),
    )
}

/// Concatenate along `axis`. All other dims must match.
pub fn concat(tape: &Tape, vars: &[Var], axis: usize) -> Var {
    assert!(!vars.is_empty());
    let vals: Vec<Tensor> = vars.iter().map(|&v| tape.value(v)).collect();
    let first = vals[0].shape().to_vec();
    let ndim = first.len();
    assert!(axis < ndim);
    let mut out_shape = first.clone();
    out_shape[axis] = vals.iter().map(|v| v.shape()[axis]).sum();
    for v in &vals {
        assert_eq!(v.shape().len(), ndim);
        for d in 0..ndim {
            if d != axis {
                assert_eq!(v.shape()[d], first[d], "concat dim {d} mismatch");
            }
        }
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let sizes: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
    let total_axis: usize = sizes.iter().sum();
    let mut out = vec![0.0f64; outer * total_axis * inner];
    for o in 0..outer {
        let mut dst_m = 0usize;
        for (v, &sz) in vals.iter().zip(sizes.iter()) {
            let src = v.data();
            let src_base = o * sz * inner;
            let dst_base = (o * total_axis + dst_m) * inner;
            out[dst_base..dst_base + sz * inner]
                .copy_from_slice(&src[src_base..src_base + sz * inner]);
            dst_m += sz;
        }
    }
    let sizes_b = sizes.clone();
    tape.op(
        vars,
        Tensor::from_vec(&out_shape, out),
        Box::new(move |g, pv, _| {
            let gd = g.data();
            let mut grads = Vec::with_capacity(pv.len());
            let mut off_m = 0usize;
            for (v, &sz) in pv.iter().zip(sizes_b.iter()) {
                let mut gx = vec![0.0f64; v.len()];
                for o in 0..outer {
                    let src_base = (o * total_axis + off_m) * inner;
                    let dst_base = o * sz * inner;
                    gx[dst_base..dst_base + sz * inner]
                        .copy_from_slice(&gd[src_base..src_base + sz * inner]);
                }
                grads.push(Tensor::from_vec(v.shape(), gx));
                off_m += sz;
            }
            grads
        }),
    )
}

/// Slice `[start, end)` along `axis`.
pub fn slice(tape: &Tape, a: Var, axis: usize, start: usize, end: usize) -> Var {
    let va = tape.value(a);
    let shape = va.shape().to_vec();
    assert!(axis < shape.len() && start < end && end <= shape[axis]);
    let mut out_shape = shape.clone();
    out_shape[axis] = end - start;
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let take = end - start;
    let mut out = vec![0.0f64; outer * take * inner];
    let src = va.data();
    for o in 0..outer {
        let src_base = (o * mid + start) * inner;
        let dst_base = o * take * inner;
        out[dst_base..dst_base + take * inner]
            .copy_from_slice(&src[src_base..src_base + take * inner]);
    }
    tape.op(
        &[a],
        Tensor::from_vec(&out_shape, out),
        Box::new(move |g, pv, _| {
            let mut gx = vec![0.0f64; pv[0].len()];
            let gd = g.data();
            for o in 0..outer {
                let dst_base = (o * mid + start) * inner;
                let src_base = o * take * inner;
                gx[dst_base..dst_base + take * inner]
                    .copy_from_slice(&gd[src_base..src_base + take * inner]);
            }
            vec![Tensor::from_vec(pv[0].shape(), gx)]
        }),
    )
}

pub fn transpose2(tape: &Tape, a: Var) -> Var {
    let va = tape.value(a);
    assert_eq!(va.shape().len(), 2);
    let (m, n) = (va.shape()[0], va.shape()[1]);
    let src = va.data();
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    tape.op(
        &[a],
        Tensor::from_vec(&[n, m], out),
        Box::new(move |g, _, _| {
            let gd = g.data();
            let mut gx = vec![0.0f64; m * n];
            for j in 0..n {
                for i in 0..m {
                    gx[i * n + j] = gd[j * m + i];
                }
            }
            vec![Tensor::from_vec(&[m, n], gx)]
        }),
    )
}

pub fn matmul(tape: &Tape, a: Var, b: Var) -> Var {
    let va = tape.value(a);
    let vb = tape.value(b);
    assert_eq!(va.shape().len(), 2, "matmul lhs must be 2-d");
    assert_eq!(vb.shape().len(), 2, "matmul rhs must be 2-d");
    let (m, k) = (va.shape()[0], va.shape()[1]);
    let (k2, n) = (vb.shape()[0], vb.shape()[1]);
    assert_eq!(k, k2, "matmul inner dims: {k} vs {k2}");
    let out = crate::gemm::gemm(&va, &vb);
    tape.op(
        &[a, b],
        out,
        Box::new(move |g, pv, _| {
            let (va, vb) = (pv[0], pv[1]);
            // dA = g . B^T ; dB = A^T . g
            let ga = crate::gemm::gemm_nt(g, vb);
            let gb = crate::gemm::gemm_tn(va, g);
            debug_assert_eq!(ga.shape(), &[m, k]);
            debug_assert_eq!(gb.shape(), &[k2, n]);
            vec![ga, gb]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&Tape, Var) -> Var, x0: Tensor, coords: &[usize], tol: f64) {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = f(&tape, x);
        let grads = tape.backward(y);
        let g = grads.get(x).expect("gradient").clone();
        let h = 1e-6;
        for &c in coords {
            let mut xp = x0.clone();
            xp.data_mut()[c] += h;
            let mut xm = x0.clone();
            xm.data_mut()[c] -= h;
            let tp = Tape::new();
            let yp = f(&tp, tp.leaf(xp)).0;
            let fp = tp.value(Var(yp)).item();
            let tm = Tape::new();
            let ym = f(&tm, tm.leaf(xm)).0;
            let fm = tm.value(Var(ym)).item();
            let fd = (fp - fm) / (2.0 * h);
            let an = g.data()[c];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                ((fd - an) / denom).abs() < tol,
                "coord {c}: fd={fd} analytic={an}"
            );
        }
    }

    #[test]
    fn grad_elementwise_chain() {
        let x0 = Tensor::from_vec(&[4], vec![0.3, -0.7, 1.2, 0.05]);
        fd_check(
            |t, x| {
                let a = sigmoid(t, x);
                let b = mul(t, a, a);
                let c = add_scalar(t, b, 0.1);
                let d = ln(t, c);
                mean(t, d)
            },
            x0,
            &[0, 1, 2, 3],
            1e-6,
        );
    }

    #[test]
    fn grad_broadcast_mul() {
        let x0 = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]);
        fd_check(
            |t, x| {
                let c = t.constant(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]));
                let y = mul(t, x, c);
                sum(t, y)
            },
            x0,
            &[0, 2, 5],
            1e-6,
        );
    }

    #[test]
    fn grad_matmul() {
        let x0 = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]);
        fd_check(
            |t, x| {
                let w = t.constant(Tensor::from_vec(&[3, 2], vec![1., 2., 3., 4., 5., 6.]));
                let y = matmul(t, x, w);
                let y2 = mul(t, y, y);
                sum(t, y2)
            },
            x0,
            &[0, 1, 4, 5],
            1e-6,
        );
    }

    #[test]
    fn grad_concat_slice() {
        let x0 = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        fd_check(
            |t, x| {
                let y = concat(t, &[x, x], 1);
                let z = slice(t, y, 1, 1, 3);
                let z2 = mul(t, z, z);
                sum(t, z2)
            },
            x0,
            &[0, 1, 2, 3],
            1e-6,
        );
    }

    #[test]
    fn grad_sum_axis_transpose() {
        let x0 = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]);
        fd_check(
            |t, x| {
                let xt = transpose2(t, x);
                let s = sum_axis(t, xt, 0);
                let s2 = mul(t, s, s);
                sum(t, s2)
            },
            x0,
            &[0, 1, 2, 3, 4, 5],
            1e-6,
        );
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let d = detach(&tape, x);
        let y = mul(&tape, d, d);
        let s = sum(&tape, y);
        let grads = tape.backward(s);
        assert!(grads.get(x).is_none());
    }
}
