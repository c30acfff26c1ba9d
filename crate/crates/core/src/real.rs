//! Scalar abstraction so geometry code runs on plain f64 or on
//! forward-mode dual numbers for exact Jacobians.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    /// Primal (value) part.
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Forward-mode dual number carrying N partial derivatives.
#[derive(Clone, Copy, Debug)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub du: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Self { re, du: [0.0; N] }
    }

    /// Variable seeded with d/dx_i = 1.
    pub fn var(re: f64, i: usize) -> Self {
        let mut du = [0.0; N];
        du[i] = 1.0;
        Self { re, du }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut du = self.du;
        for (a, b) in du.iter_mut().zip(rhs.du.iter()) {
            *a += b;
        }
        Self {
            re: self.re + rhs.re,
            du,
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut du = self.du;
        for (a, b) in du.iter_mut().zip(rhs.du.iter()) {
            *a -= b;
        }
        Self {
            re: self.re - rhs.re,
            du,
        }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut du = [0.0; N];
        for i in 0..N {
            du[i] = self.du[i] * rhs.re + self.re * rhs.du[i];
        }
        Self {
            re: self.re * rhs.re,
            du,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut du = [0.0; N];
        for i in 0..N {
            du[i] = (self.du[i] - re * rhs.du[i]) * inv;
        }
        Self { re, du }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut du = self.du;
        for a in du.iter_mut() {
            *a = -*a;
        }
        Self { re: -self.re, du }
    }
}

impl<const N: usize> Real for Dual<N> {
    fn from_f64(x: f64) -> Self {
        Self::constant(x)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        let scale = 0.5 / r;
        let mut du = self.du;
        for a in du.iter_mut() {
            *a *= scale;
        }
        Self { re: r, du }
    }
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        let mut du = self.du;
        for a in du.iter_mut() {
            *a *= c;
        }
        Self { re: s, du }
    }
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        let mut du = self.du;
        for a in du.iter_mut() {
            *a *= -s;
        }
        Self { re: c, du }
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        let mut du = self.du;
        for a in du.iter_mut() {
            *a *= e;
        }
        Self { re: e, du }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_derivatives_match_calculus() {
        // f(x, y) = x^2 * sin(y) + sqrt(x)
        let x = Dual::<2>::var(2.0, 0);
        let y = Dual::<2>::var(0.7, 1);
        let f = x * x * y.sin() + x.sqrt();
        let expect_fx = 2.0 * 2.0 * 0.7f64.sin() + 0.5 / 2.0f64.sqrt();
        let expect_fy = 4.0 * 0.7f64.cos();
        assert!((f.re - (4.0 * 0.7f64.sin() + 2.0f64.sqrt())).abs() < 1e-12);
        assert!((f.du[0] - expect_fx).abs() < 1e-12);
        assert!((f.du[1] - expect_fy).abs() < 1e-12);
    }

    #[test]
    fn dual_division_quotient_rule() {
        let x = Dual::<1>::var(3.0, 0);
        let g = x / (x * x + Dual::constant(1.0));
        // d/dx x/(x^2+1) = (1 - x^2)/(x^2+1)^2
        let expect = (1.0 - 9.0) / (100.0);
        assert!((g.du[0] - expect).abs() < 1e-12);
    }
}
