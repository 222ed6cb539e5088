//! Fixed-width forward-mode dual numbers.
//!
//! Only the handful of operations the spline transform needs are provided.

use std::ops::{Add, Div, Mul, Sub};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    /// The `i`-th independent variable with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Dual { v, d }
    }

    pub fn ln(self) -> Self {
        let inv = 1.0 / self.v;
        let mut d = self.d;
        d.iter_mut().for_each(|x| *x *= inv);
        Dual { v: self.v.ln(), d }
    }

    pub fn scale(self, k: f64) -> Self {
        let mut d = self.d;
        d.iter_mut().for_each(|x| *x *= k);
        Dual { v: self.v * k, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a += b;
        }
        Dual { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a -= b;
        }
        Dual { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for (i, v) in d.iter_mut().enumerate() {
            *v = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut d = [0.0; N];
        for (i, v) in d.iter_mut().enumerate() {
            *v = (self.d[i] - q * o.d[i]) * inv;
        }
        Dual { v: q, d }
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Dual { v: self.v + o, d: self.d }
    }
}

impl<const N: usize> Sub<Dual<N>> for f64 {
    type Output = Dual<N>;
    fn sub(self, o: Dual<N>) -> Dual<N> {
        o.scale(-1.0) + self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.scale(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotient_rule() {
        // f(x, y) = x / (x + y) at (1, 3): df/dx = y/(x+y)^2, df/dy = -x/(x+y)^2
        let x = Dual::<2>::var(1.0, 0);
        let y = Dual::<2>::var(3.0, 1);
        let f = x / (x + y);
        assert!((f.v - 0.25).abs() < 1e-15);
        assert!((f.d[0] - 3.0 / 16.0).abs() < 1e-15);
        assert!((f.d[1] + 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn log_of_product() {
        let x = Dual::<1>::var(2.0, 0);
        let f = (x * x).ln();
        assert!((f.d[0] - 1.0).abs() < 1e-15);
    }
}
