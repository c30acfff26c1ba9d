//! Rotation representations: axis-angle, 3x3 matrices, and the
//! continuous 6D parameterization, plus geodesic angles between rotations.

use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum RotError {
    #[error("non-finite component in rotation input")]
    NonFinite,
    #[error("degenerate 6d input: {0}")]
    Degenerate(&'static str),
}

/// Row-major 3x3 matrix over any scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3g<T>(pub [[T; 3]; 3]);

pub type Mat3 = Mat3g<f64>;

/// 3-vector over any scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3g<T>(pub [T; 3]);

pub type Vec3 = Vec3g<f64>;

impl<T: Real> Vec3g<T> {
    pub fn zero() -> Self {
        Self([T::zero(); 3])
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Self([T::from_f64(v[0]), T::from_f64(v[1]), T::from_f64(v[2])])
    }

    pub fn dot(self, o: Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Self) -> Self {
        Self([
            self.0[1] * o.0[2] - self.0[2] * o.0[1],
            self.0[2] * o.0[0] - self.0[0] * o.0[2],
            self.0[0] * o.0[1] - self.0[1] * o.0[0],
        ])
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: T) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }

    pub fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }

    pub fn values(self) -> [f64; 3] {
        [self.0[0].value(), self.0[1].value(), self.0[2].value()]
    }
}

impl<T: Real> Mat3g<T> {
    pub fn identity() -> Self {
        let o = T::one();
        let z = T::zero();
        Self([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn from_f64(m: Mat3) -> Self {
        let mut out = Self::identity();
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = T::from_f64(m.0[i][j]);
            }
        }
        out
    }

    pub fn from_cols(c0: Vec3g<T>, c1: Vec3g<T>, c2: Vec3g<T>) -> Self {
        Self([
            [c0.0[0], c1.0[0], c2.0[0]],
            [c0.0[1], c1.0[1], c2.0[1]],
            [c0.0[2], c1.0[2], c2.0[2]],
        ])
    }

    pub fn col(&self, j: usize) -> Vec3g<T> {
        Vec3g([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3g<T>) -> Vec3g<T> {
        let m = &self.0;
        Vec3g([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::identity();
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = self.0[i][0] * o.0[0][j]
                    + self.0[i][1] * o.0[1][j]
                    + self.0[i][2] * o.0[2][j];
            }
        }
        out
    }

    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn values(&self) -> Mat3 {
        let mut out = Mat3::identity();
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = self.0[i][j].value();
            }
        }
        out
    }
}

impl Mat3 {
    pub fn from_flat(d: &[f64]) -> Mat3 {
        assert_eq!(d.len(), 9);
        Mat3g([
            [d[0], d[1], d[2]],
            [d[3], d[4], d[5]],
            [d[6], d[7], d[8]],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Max deviation from orthonormality + det drift; 0 for exact rotations.
    pub fn rotation_defect(&self) -> f64 {
        let rtr = self.transpose().mul_mat(self);
        let mut defect = (self.det() - 1.0).abs();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((rtr.0[i][j] - target).abs());
            }
        }
        defect
    }

    pub fn flat(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }
}

/// Rotation in one of the three supported representations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rotation {
    AxisAngle([f64; 3]),
    Matrix(Mat3),
    SixD([f64; 6]),
}

impl Rotation {
    pub fn to_matrix(&self) -> Result<Mat3, RotError> {
        match self {
            Rotation::AxisAngle(aa) => axis_angle_to_matrix(*aa),
            Rotation::Matrix(m) => Ok(*m),
            Rotation::SixD(r6) => sixd_to_matrix(*r6),
        }
    }
}

/// Rodrigues formula, generic so forward-mode duals pass through.
/// Uses series expansions of sin(t)/t and (1-cos t)/t^2 near zero, which
/// keeps the function smooth for differentiation.
pub fn axis_angle_to_matrix_generic<T: Real>(aa: Vec3g<T>) -> Mat3g<T> {
    let t2 = aa.dot(aa);
    let t2v = t2.value();
    let (a, b) = if t2v < 1e-12 {
        // sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        let half = T::from_f64(0.5);
        let one = T::one();
        (
            one - t2 * T::from_f64(1.0 / 6.0),
            half - t2 * T::from_f64(1.0 / 24.0),
        )
    } else {
        let t = t2.sqrt();
        (t.sin() / t, (T::one() - t.cos()) / t2)
    };
    let (x, y, z) = (aa.0[0], aa.0[1], aa.0[2]);
    let zero = T::zero();
    // K = [aa]_x ; R = I + a K + b K^2
    let k = Mat3g([[zero, -z, y], [z, zero, -x], [-y, x, zero]]);
    let k2 = k.mul_mat(&k);
    let mut out = Mat3g::<T>::identity();
    for i in 0..3 {
        for j in 0..3 {
            out.0[i][j] = out.0[i][j] + a * k.0[i][j] + b * k2.0[i][j];
        }
    }
    out
}

pub fn axis_angle_to_matrix(aa: [f64; 3]) -> Result<Mat3, RotError> {
    if aa.iter().any(|x| !x.is_finite()) {
        return Err(RotError::NonFinite);
    }
    Ok(axis_angle_to_matrix_generic(Vec3g(aa)))
}

/// Log map: rotation matrix to axis-angle, angle in [0, pi].
pub fn matrix_to_axis_angle(m: &Mat3) -> [f64; 3] {
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let t = cos_t.acos();
    if t < 1e-10 {
        return [0.0, 0.0, 0.0];
    }
    if t > std::f64::consts::PI - 1e-6 {
        // near pi: extract axis from the symmetric part
        let a = &m.0;
        let xx = ((a[0][0] + 1.0) * 0.5).max(0.0).sqrt();
        let yy = ((a[1][1] + 1.0) * 0.5).max(0.0).sqrt();
        let zz = ((a[2][2] + 1.0) * 0.5).max(0.0).sqrt();
        // pick signs consistent with off-diagonal sums
        let x = xx;
        let y = if a[0][1] + a[1][0] >= 0.0 { yy } else { -yy };
        let z = if a[0][2] + a[2][0] >= 0.0 { zz } else { -zz };
        let n = (x * x + y * y + z * z).sqrt().max(1e-12);
        return [t * x / n, t * y / n, t * z / n];
    }
    let s = 2.0 * t.sin();
    let ax = (m.0[2][1] - m.0[1][2]) / s;
    let ay = (m.0[0][2] - m.0[2][0]) / s;
    let az = (m.0[1][0] - m.0[0][1]) / s;
    [t * ax, t * ay, t * az]
}

/// Gram-Schmidt of two 3-vectors packed as (a0, a1); third column is the
/// cross product. Generic over the scalar for in-graph or dual use.
pub fn sixd_to_matrix_generic<T: Real>(r6: [T; 6]) -> Result<Mat3g<T>, RotError> {
    let a = Vec3g([r6[0], r6[1], r6[2]]);
    let b = Vec3g([r6[3], r6[4], r6[5]]);
    let na = a.norm();
    if na.value() <= 1e-8 {
        return Err(RotError::Degenerate("first column near zero"));
    }
    let c0 = a.scale(T::one() / na);
    let proj = c0.dot(b);
    let b_orth = b.sub(c0.scale(proj));
    let nb = b_orth.norm();
    if nb.value() <= 1e-8 {
        return Err(RotError::Degenerate("columns are parallel"));
    }
    let c1 = b_orth.scale(T::one() / nb);
    let c2 = c0.cross(c1);
    Ok(Mat3g::from_cols(c0, c1, c2))
}

pub fn sixd_to_matrix(r6: [f64; 6]) -> Result<Mat3, RotError> {
    if r6.iter().any(|x| !x.is_finite()) {
        return Err(RotError::NonFinite);
    }
    sixd_to_matrix_generic(r6)
}

/// First two columns of a rotation matrix, flattened.
pub fn matrix_to_sixd(m: &Mat3) -> [f64; 6] {
    [
        m.0[0][0], m.0[1][0], m.0[2][0], m.0[0][1], m.0[1][1], m.0[2][1],
    ]
}

/// Geodesic angle between two rotations, in degrees, in [0, 180].
/// The arccos argument is clamped against floating-point drift.
pub fn geodesic_angle_deg(ra: &Mat3, rb: &Mat3) -> f64 {
    let rel = ra.transpose().mul_mat(rb);
    let arg = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    arg.acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Independent oracle: unit quaternions.
    #[derive(Clone, Copy, Debug)]
    struct Quat {
        w: f64,
        x: f64,
        y: f64,
        z: f64,
    }

    impl Quat {
        fn from_axis_angle(aa: [f64; 3]) -> Self {
            let t = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
            if t < 1e-15 {
                return Self {
                    w: 1.0,
                    x: 0.0,
                    y: 0.0,
                    z: 0.0,
                };
            }
            let (s, c) = ((t / 2.0).sin(), (t / 2.0).cos());
            Self {
                w: c,
                x: s * aa[0] / t,
                y: s * aa[1] / t,
                z: s * aa[2] / t,
            }
        }

        fn mul(self, o: Quat) -> Quat {
            Quat {
                w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
                x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
                y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
                z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
            }
        }

        fn to_matrix(self) -> Mat3 {
            let (w, x, y, z) = (self.w, self.x, self.y, self.z);
            Mat3g([
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ])
        }

        fn angle_deg(self) -> f64 {
            2.0 * self.w.abs().clamp(-1.0, 1.0).acos().to_degrees()
        }
    }

    fn mat_close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        a.0.iter()
            .flatten()
            .zip(b.0.iter().flatten())
            .all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn zero_axis_angle_is_identity() {
        let r = axis_angle_to_matrix([0.0, 0.0, 0.0]).unwrap();
        assert!(mat_close(&r, &Mat3::identity(), 1e-15));
    }

    #[test]
    fn half_turn_about_z_flips_x() {
        let r = axis_angle_to_matrix([0.0, 0.0, PI]).unwrap();
        let v = r.mul_vec(Vec3g([1.0, 0.0, 0.0]));
        assert!((v.0[0] + 1.0).abs() < 1e-12);
        assert!(v.0[1].abs() < 1e-12);
        assert!(v.0[2].abs() < 1e-12);
    }

    #[test]
    fn composition_doubles_axis_aligned_rotation() {
        // oracle: quaternion composition
        for axis in [[0.7, 0.0, 0.0], [0.0, -1.2, 0.0], [0.0, 0.0, 0.4]] {
            let r = axis_angle_to_matrix(axis).unwrap();
            let rr = r.mul_mat(&r);
            let q2 = Quat::from_axis_angle(axis).mul(Quat::from_axis_angle(axis));
            assert!(mat_close(&rr, &q2.to_matrix(), 1e-9));
            let direct = axis_angle_to_matrix([2.0 * axis[0], 2.0 * axis[1], 2.0 * axis[2]])
                .unwrap();
            assert!(mat_close(&rr, &direct, 1e-9));
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        assert_eq!(
            axis_angle_to_matrix([f64::NAN, 0.0, 0.0]),
            Err(RotError::NonFinite)
        );
        assert_eq!(
            sixd_to_matrix([f64::INFINITY, 0.0, 0.0, 0.0, 1.0, 0.0]),
            Err(RotError::NonFinite)
        );
    }

    #[test]
    fn sixd_identity_passthrough() {
        let r = sixd_to_matrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(mat_close(&r, &Mat3::identity(), 1e-15));
    }

    #[test]
    fn sixd_gram_schmidt_matches_hand_computation() {
        // columns (2,0,0), (1,1,0): normalize -> (1,0,0); orthogonalize
        // (1,1,0) against it -> (0,1,0); cross -> (0,0,1)
        let r = sixd_to_matrix([2.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(mat_close(&r, &Mat3::identity(), 1e-12));
    }

    #[test]
    fn sixd_degenerate_inputs_rejected() {
        assert!(matches!(
            sixd_to_matrix([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            Err(RotError::Degenerate(_))
        ));
        assert!(matches!(
            sixd_to_matrix([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(RotError::Degenerate(_))
        ));
    }

    #[test]
    fn geodesic_angle_known_values() {
        let r = axis_angle_to_matrix([0.3, -0.8, 0.1]).unwrap();
        assert!(geodesic_angle_deg(&r, &r).abs() < 1e-9);

        let ry = axis_angle_to_matrix([0.0, 30.0f64.to_radians(), 0.0]).unwrap();
        assert!((geodesic_angle_deg(&Mat3::identity(), &ry) - 30.0).abs() < 1e-9);

        // 90 deg about x then 90 deg about y -> 120 deg total
        // oracle: quaternion angle formula
        let qx = Quat::from_axis_angle([PI / 2.0, 0.0, 0.0]);
        let qy = Quat::from_axis_angle([0.0, PI / 2.0, 0.0]);
        let q = qy.mul(qx);
        assert!((q.angle_deg() - 120.0).abs() < 1e-9);
        let rx = axis_angle_to_matrix([PI / 2.0, 0.0, 0.0]).unwrap();
        let ryy = axis_angle_to_matrix([0.0, PI / 2.0, 0.0]).unwrap();
        let comp = ryy.mul_mat(&rx);
        assert!((geodesic_angle_deg(&Mat3::identity(), &comp) - 120.0).abs() < 1e-9);
    }

    #[test]
    fn axis_angle_round_trip() {
        for aa in [
            [0.3, -0.5, 0.7],
            [1.5, 0.0, 0.0],
            [0.0, 2.9, 0.1],
            [1e-8, 0.0, 1e-9],
        ] {
            let m = axis_angle_to_matrix(aa).unwrap();
            let back = matrix_to_axis_angle(&m);
            let m2 = axis_angle_to_matrix(back).unwrap();
            assert!(mat_close(&m, &m2, 1e-7), "failed for {aa:?}");
        }
    }

    proptest! {
        #[test]
        fn prop_axis_angle_gives_rotation(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0
        ) {
            let m = axis_angle_to_matrix([x, y, z]).unwrap();
            prop_assert!(m.rotation_defect() < 1e-9);
        }

        #[test]
        fn prop_negated_axis_angle_is_transpose(
            x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0
        ) {
            let m = axis_angle_to_matrix([x, y, z]).unwrap();
            let mt = axis_angle_to_matrix([-x, -y, -z]).unwrap();
            prop_assert!(mat_close(&m.transpose(), &mt, 1e-9));
        }

        #[test]
        fn prop_sixd_orthonormal_and_scale_invariant(
            a0 in -2.0f64..2.0, a1 in -2.0f64..2.0, a2 in -2.0f64..2.0,
            b0 in -2.0f64..2.0, b1 in -2.0f64..2.0, b2 in -2.0f64..2.0,
            s in 0.1f64..5.0,
        ) {
            let r6 = [a0, a1, a2, b0, b1, b2];
            if let Ok(m) = sixd_to_matrix(r6) {
                prop_assert!(m.rotation_defect() < 1e-9);
                let scaled = sixd_to_matrix([a0*s, a1*s, a2*s, b0*s, b1*s, b2*s]).unwrap();
                prop_assert!(mat_close(&m, &scaled, 1e-9));
            }
        }

        #[test]
        fn prop_geodesic_symmetric_and_left_invariant(
            ax in -2.0f64..2.0, ay in -2.0f64..2.0, az in -2.0f64..2.0,
            bx in -2.0f64..2.0, by in -2.0f64..2.0, bz in -2.0f64..2.0,
            cx in -2.0f64..2.0, cy in -2.0f64..2.0, cz in -2.0f64..2.0,
        ) {
            let ra = axis_angle_to_matrix([ax, ay, az]).unwrap();
            let rb = axis_angle_to_matrix([bx, by, bz]).unwrap();
            let rc = axis_angle_to_matrix([cx, cy, cz]).unwrap();
            let d1 = geodesic_angle_deg(&ra, &rb);
            let d2 = geodesic_angle_deg(&rb, &ra);
            prop_assert!((d1 - d2).abs() < 1e-8);
            let d3 = geodesic_angle_deg(&rc.mul_mat(&ra), &rc.mul_mat(&rb));
            prop_assert!((d1 - d3).abs() < 1e-7);
        }

        #[test]
        fn prop_matrix_round_trip_away_from_pi(
            x in -2.9f64..2.9, y in -2.9f64..2.9, z in -2.9f64..2.9
        ) {
            let t = (x*x + y*y + z*z).sqrt();
            prop_assume!(t < std::f64::consts::PI - 0.05);
            let m = axis_angle_to_matrix([x, y, z]).unwrap();
            let back = matrix_to_axis_angle(&m);
            let m2 = axis_angle_to_matrix(back).unwrap();
            prop_assert!(mat_close(&m, &m2, 1e-7));
        }
    }
}
