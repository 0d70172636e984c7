//! Scalar types threaded through the pointwise height operator: plain
//! `f64`, forward-mode duals (for the linearization coefficients) and
//! truncated Taylor jets in time (for the formal solution).

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Leading (point) value.
    fn value(&self) -> f64;
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
}

/// Dual number with `K` independent infinitesimal directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const K: usize> {
    pub re: f64,
    pub eps: [f64; K],
}

impl<const K: usize> Dual<K> {
    pub fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; K] }
    }

    pub fn variable(re: f64, index: usize) -> Self {
        let mut eps = [0.0; K];
        eps[index] = 1.0;
        Self { re, eps }
    }
}

impl<const K: usize> Scalar for Dual<K> {
    fn value(&self) -> f64 {
        self.re
    }
}

impl<const K: usize> Add for Dual<K> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.re += o.re;
        for i in 0..K {
            self.eps[i] += o.eps[i];
        }
        self
    }
}

impl<const K: usize> Sub for Dual<K> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        self.re -= o.re;
        for i in 0..K {
            self.eps[i] -= o.eps[i];
        }
        self
    }
}

impl<const K: usize> Mul for Dual<K> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut eps = [0.0; K];
        for i in 0..K {
            eps[i] = self.eps[i] * o.re + self.re * o.eps[i];
        }
        Self { re: self.re * o.re, eps }
    }
}

impl<const K: usize> Div for Dual<K> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        let mut eps = [0.0; K];
        for i in 0..K {
            eps[i] = (self.eps[i] - q * o.eps[i]) / o.re;
        }
        Self { re: q, eps }
    }
}

impl<const K: usize> Neg for Dual<K> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in self.eps.iter_mut() {
            *e = -*e;
        }
        self
    }
}

impl<const K: usize> Add<f64> for Dual<K> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.re += o;
        self
    }
}

impl<const K: usize> Sub<f64> for Dual<K> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.re -= o;
        self
    }
}

impl<const K: usize> Mul<f64> for Dual<K> {
    type Output = Self;
    fn mul(mut self, o: f64) -> Self {
        self.re *= o;
        for e in self.eps.iter_mut() {
            *e *= o;
        }
        self
    }
}

impl<const K: usize> Div<f64> for Dual<K> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

/// Truncated Taylor polynomial in one variable: `c[j]` is the coefficient
/// of `t^j` (i.e. the `j`-th derivative divided by `j!`). Arithmetic is
/// exact modulo `t^N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub c: [f64; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = v;
        Self { c }
    }

    pub fn from_coeffs(coeffs: &[f64]) -> Self {
        let mut c = [0.0; N];
        for (ci, v) in c.iter_mut().zip(coeffs) {
            *ci = *v;
        }
        Self { c }
    }
}

impl<const N: usize> Scalar for Jet<N> {
    fn value(&self) -> f64 {
        self.c[0]
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for i in 0..N {
            self.c[i] += o.c[i];
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        for i in 0..N {
            self.c[i] -= o.c[i];
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; N];
        for i in 0..N {
            for j in 0..N - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Self { c }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let mut q = [0.0; N];
        for k in 0..N {
            let mut s = self.c[k];
            for j in 1..=k {
                s -= o.c[j] * q[k - j];
            }
            q[k] = s / o.c[0];
        }
        Self { c: q }
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(mut self) -> Self {
        for v in self.c.iter_mut() {
            *v = -*v;
        }
        self
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.c[0] += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.c[0] -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(mut self, o: f64) -> Self {
        for v in self.c.iter_mut() {
            *v *= o;
        }
        self
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dual_quotient_rule() {
        let x = Dual::<2>::variable(2.0, 0);
        let y = Dual::<2>::variable(3.0, 1);
        let f = (x * y + 1.0) / (x - y * 0.5);
        // f = (xy+1)/(x - y/2); df/dx = (y(x-y/2) - (xy+1))/(x-y/2)^2
        let d = 2.0 - 1.5;
        assert!((f.re - 7.0 / d).abs() < 1e-14);
        assert!((f.eps[0] - (3.0 * d - 7.0) / (d * d)).abs() < 1e-12);
        assert!((f.eps[1] - (2.0 * d + 0.5 * 7.0) / (d * d)).abs() < 1e-12);
    }

    #[test]
    fn jet_reciprocal_is_geometric_series() {
        let one_minus_t = Jet::<5>::from_coeffs(&[1.0, -1.0]);
        let r = Jet::<5>::constant(1.0) / one_minus_t;
        assert_eq!(r.c, [1.0; 5]);
    }

    proptest! {
        #[test]
        fn jet_division_inverts_multiplication(
            a in prop::array::uniform4(-2.0f64..2.0),
            b0 in 0.5f64..3.0,
            b in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let ja = Jet::<4>::from_coeffs(&a);
            let jb = Jet::<4>::from_coeffs(&[b0, b[0], b[1], b[2]]);
            let back = (ja / jb) * jb;
            for i in 0..4 {
                prop_assert!((back.c[i] - a[i]).abs() < 1e-9);
            }
        }
    }
}
