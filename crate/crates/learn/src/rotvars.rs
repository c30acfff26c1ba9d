//! In-graph rotation algebra: continuous 6D parameters to rotation
//! matrices, and geodesic angles between matrix batches.

use repose_autograd::{
    acos_safe, add_scalar, concat, div, mul, scale, slice, sqrt, sub, sum_axis, Tape, Var,
};

/// Gram-Schmidt of packed 6D rows: x is (m,6), output (m,9) row-major
/// rotation matrices with the two orthonormalized vectors as the first
/// two columns and their cross product as the third.
pub fn rot6d_to_matrix_vars(tape: &Tape, x: Var) -> Var {
    let shape = tape.shape(x);
    assert_eq!(shape.len(), 2);
    assert_eq!(shape[1], 6, "expected (m,6), got {shape:?}");
    let a = slice(tape, x, 1, 0, 3);
    let b = slice(tape, x, 1, 3, 6);
    let norm = |v: Var| -> Var {
        let sq = mul(tape, v, v);
        let s = sum_axis(tape, sq, 1);
        sqrt(tape, add_scalar(tape, s, 1e-24))
    };
    let c0 = div(tape, a, norm(a));
    let proj = sum_axis(tape, mul(tape, c0, b), 1);
    let b_orth = sub(tape, b, mul(tape, c0, proj));
    let c1 = div(tape, b_orth, norm(b_orth));
    let comp = |v: Var, i: usize| slice(tape, v, 1, i, i + 1);
    let cross = |u: Var, v: Var| -> [Var; 3] {
        let (u0, u1, u2) = (comp(u, 0), comp(u, 1), comp(u, 2));
        let (v0, v1, v2) = (comp(v, 0), comp(v, 1), comp(v, 2));
        [
            sub(tape, mul(tape, u1, v2), mul(tape, u2, v1)),
            sub(tape, mul(tape, u2, v0), mul(tape, u0, v2)),
            sub(tape, mul(tape, u0, v1), mul(tape, u1, v0)),
        ]
    };
    let c2 = cross(c0, c1);
    // row-major: row r = (c0[r], c1[r], c2[r])
    let cols = [
        comp(c0, 0),
        comp(c1, 0),
        c2[0],
        comp(c0, 1),
        comp(c1, 1),
        c2[1],
        comp(c0, 2),
        comp(c1, 2),
        c2[2],
    ];
    concat(tape, &cols, 1)
}

/// Geodesic angle in radians between matrix batches (m,9):
/// acos((trace(Ra^T Rb) - 1) / 2), elementwise over the batch.
pub fn geodesic_angle_vars(tape: &Tape, ra: Var, rb: Var) -> Var {
    // trace(Ra^T Rb) = sum of the elementwise product
    let prod = mul(tape, ra, rb);
    let tr = sum_axis(tape, prod, 1);
    let arg = scale(tape, add_scalar(tape, tr, -1.0), 0.5);
    acos_safe(tape, arg)
}
