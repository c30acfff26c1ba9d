//! Dense row-major f64 tensors with copy-on-write storage.

use std::sync::Arc;

/// Dense tensor of f64 values. Cloning is cheap (shared storage);
/// mutation copies the buffer when it is shared.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "shape {:?} wants {} elements, got {}",
            shape,
            n,
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(&[1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the buffer; copies if the storage is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Single element of a [1]-shaped tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same storage, new shape (element counts must match).
    pub fn reshaped(&self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.len(), "reshape {:?} -> {:?}", self.shape, shape);
        Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        let dst = self.data_mut();
        for (d, s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|x| !x.is_finite())
    }

    /// Max absolute entry (0.0 for empty tensors).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// Right-aligned broadcast of two shapes, numpy style.
/// Returns None when the shapes are incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Row-major strides, with stride 0 on broadcast (size-1) axes
/// relative to `out_shape`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let ndim = out_shape.len();
    let offset = ndim - shape.len();
    let mut strides = vec![0usize; ndim];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Elementwise binary op with broadcasting.
pub fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor {
            shape: a.shape.clone(),
            data: Arc::new(data),
        };
    }
    if b.len() == 1 {
        let y = b.data[0];
        return a.map(|x| f(x, y));
    }
    if a.len() == 1 {
        let x = a.data[0];
        return b.map(|y| f(x, y));
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape)
        .unwrap_or_else(|| panic!("incompatible shapes {:?} vs {:?}", a.shape, b.shape));
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let n: usize = out_shape.iter().product();
    let ndim = out_shape.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; ndim];
    let mut off_a = 0usize;
    let mut off_b = 0usize;
    for _ in 0..n {
        out.push(f(a.data[off_a], b.data[off_b]));
        // odometer increment
        for d in (0..ndim).rev() {
            idx[d] += 1;
            off_a += sa[d];
            off_b += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            off_a -= sa[d] * out_shape[d];
            off_b -= sb[d] * out_shape[d];
        }
    }
    Tensor {
        shape: out_shape,
        data: Arc::new(out),
    }
}

/// Sum `grad` down to `target_shape` by collapsing broadcast axes.
/// Inverse of broadcasting for the backward pass.
pub fn reduce_to_shape(grad: &Tensor, target_shape: &[usize]) -> Tensor {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    let n_target: usize = target_shape.iter().product();
    if n_target == 1 {
        return Tensor::from_vec(target_shape, vec![grad.sum()]);
    }
    let ndim = grad.shape.len();
    let offset = ndim - target_shape.len();
    let strides = broadcast_strides(target_shape, &grad.shape);
    let mut out = vec![0.0f64; n_target];
    let mut idx = vec![0usize; ndim];
    let mut off = 0usize;
    for &g in grad.data.iter() {
        out[off] += g;
        for d in (0..ndim).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < grad.shape[d] {
                break;
            }
            idx[d] = 0;
            off -= strides[d] * grad.shape[d];
        }
    }
    let _ = offset;
    Tensor::from_vec(target_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[3, 1], &[1, 4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn zip_and_reduce_round_trip() {
        let a = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::from_vec(&[3], vec![10., 20., 30.]);
        let s = zip_broadcast(&a, &b, |x, y| x + y);
        assert_eq!(s.data(), &[11., 22., 33., 14., 25., 36.]);
        let r = reduce_to_shape(&s, &[3]);
        assert_eq!(r.data(), &[25., 47., 69.]);
    }

    #[test]
    fn reduce_keeps_matching_shape() {
        let g = Tensor::from_vec(&[2, 2], vec![1., 2., 3., 4.]);
        let r = reduce_to_shape(&g, &[2, 2]);
        assert_eq!(r.data(), g.data());
    }
}
