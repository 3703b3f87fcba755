//! Second-order forward-mode differentiation.
//!
//! A [`Jet`] carries a value together with its gradient and Hessian with
//! respect to `N` seed variables. Likelihood code is written once against the
//! [`Real`] trait and evaluated either on plain `f64` (line searches, finite
//! differences) or on `Jet<N>` (Newton steps, observed information).

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic needed by the likelihood kernels.
pub trait Real:
    Copy
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
    fn constant(x: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn exp_m1(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;
}

impl Real for f64 {
    fn constant(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn recip(self) -> Self {
        f64::recip(self)
    }
}

/// Value, gradient and Hessian of a scalar function of `N` variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Jet<N> {
    /// Seed variable `index` at `value`.
    pub fn var(value: f64, index: usize) -> Self {
        let mut g = [0.0; N];
        g[index] = 1.0;
        Jet {
            v: value,
            g,
            h: [[0.0; N]; N],
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Apply a scalar function given its value and first two derivatives.
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        let mut out = Jet {
            v: f,
            g: [0.0; N],
            h: [[0.0; N]; N],
        };
        for i in 0..N {
            out.g[i] = df * self.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = df * self.h[i][j] + d2f * self.g[i] * self.g[j];
            }
        }
        out
    }
}

impl<const N: usize> Real for Jet<N> {
    fn constant(x: f64) -> Self {
        Jet {
            v: x,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }
    fn value(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn exp_m1(self) -> Self {
        let e = self.v.exp();
        self.chain(self.v.exp_m1(), e, e)
    }
    fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.ln(), r, -r * r)
    }
    fn ln_1p(self) -> Self {
        let r = 1.0 / (1.0 + self.v);
        self.chain(self.v.ln_1p(), r, -r * r)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.v += rhs.v;
        for i in 0..N {
            self.g[i] += rhs.g[i];
            for j in 0..N {
                self.h[i][j] += rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for i in 0..N {
            self.g[i] = -self.g[i];
            for j in 0..N {
                self.h[i][j] = -self.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Jet {
            v: self.v * rhs.v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        };
        for i in 0..N {
            out.g[i] = self.v * rhs.g[i] + rhs.v * self.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = self.v * rhs.h[i][j]
                    + rhs.v * self.h[i][j]
                    + self.g[i] * rhs.g[j]
                    + self.g[j] * rhs.g[i];
            }
        }
        out
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.v += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.v -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        self.v *= rhs;
        for i in 0..N {
            self.g[i] *= rhs;
            for j in 0..N {
                self.h[i][j] *= rhs;
            }
        }
        self
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

/// Numerically stable logistic function.
pub fn expit<T: Real>(x: T) -> T {
    if x.value() >= 0.0 {
        ((-x).exp() + 1.0).recip()
    } else {
        let e = x.exp();
        e / (e + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Real>(x: T, y: T) -> T {
        (x * y).exp() / (x * x + 1.0).sqrt() + (y + 2.0).ln() - expit(x - y)
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let (x0, y0) = (0.3, -0.7);
        let j = f(Jet::<2>::var(x0, 0), Jet::<2>::var(y0, 1));
        let step = 1e-5;
        let gx = (f(x0 + step, y0) - f(x0 - step, y0)) / (2.0 * step);
        let gy = (f(x0, y0 + step) - f(x0, y0 - step)) / (2.0 * step);
        assert!((j.g[0] - gx).abs() < 1e-8);
        assert!((j.g[1] - gy).abs() < 1e-8);

        let gxj = |x: f64, y: f64| f(Jet::<2>::var(x, 0), Jet::<2>::var(y, 1)).g;
        let hxy = (gxj(x0, y0 + step)[0] - gxj(x0, y0 - step)[0]) / (2.0 * step);
        let hxx = (gxj(x0 + step, y0)[0] - gxj(x0 - step, y0)[0]) / (2.0 * step);
        assert!((j.h[0][1] - hxy).abs() < 1e-7);
        assert!((j.h[1][0] - hxy).abs() < 1e-7);
        assert!((j.h[0][0] - hxx).abs() < 1e-7);
        assert_eq!(j.v, f(x0, y0));
    }

    #[test]
    fn expit_is_stable_in_the_tails() {
        assert_eq!(expit(800.0_f64), 1.0);
        assert!(expit(-800.0_f64) >= 0.0);
        assert!((expit(0.0_f64) - 0.5).abs() < 1e-15);
    }
}
