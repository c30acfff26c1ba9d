//! Thin wrappers over `matrixmultiply::dgemm` for row-major tensors.

use crate::tensor::Tensor;

fn dgemm_raw(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C = A (m,k) . B (k,n)
pub fn gemm(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    assert_eq!(b.shape()[0], k);
    let mut c = vec![0.0f64; m * n];
    dgemm_raw(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, &mut c);
    Tensor::from_vec(&[m, n], c)
}

/// C = A (m,k) . B^T where B is (n,k)
pub fn gemm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    assert_eq!(b.shape()[1], k);
    let mut c = vec![0.0f64; m * n];
    dgemm_raw(m, k, n, a.data(), k as isize, 1, b.data(), 1, k as isize, &mut c);
    Tensor::from_vec(&[m, n], c)
}

/// C = A^T . B where A is (k,m), B is (k,n)
pub fn gemm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    assert_eq!(b.shape()[0], k);
    let mut c = vec![0.0f64; m * n];
    dgemm_raw(m, k, n, a.data(), 1, m as isize, b.data(), n as isize, 1, &mut c);
    Tensor::from_vec(&[m, n], c)
}

/// Raw slice variant of [`gemm`] writing into a caller buffer.
pub fn gemm_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    dgemm_raw(m, k, n, a, k as isize, 1, b, n as isize, 1, c);
}

/// C = A (m,k) . B^T with B given as (n,k) slice, into a caller buffer.
pub fn gemm_nt_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    dgemm_raw(m, k, n, a, k as isize, 1, b, 1, k as isize, c);
}

/// C = A^T (k,m) . B (k,n), into a caller buffer.
pub fn gemm_tn_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    dgemm_raw(m, k, n, a, 1, m as isize, b, n as isize, 1, c);
}
