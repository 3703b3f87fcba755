//! Plackett copula in forms that stay accurate near independence and for
//! extreme association.
//!
//! With `eta = theta - 1`, `A = 1 + eta (u + v)` and
//! `D = 1 + 2 eta (u + v - 2uv) + eta^2 (u - v)^2`,
//!
//! ```text
//! C(u, v) = (A - sqrt D) / (2 eta) = 2 theta u v / (A + sqrt D)
//! ```
//!
//! and the second form is used whenever `A >= 0` so nothing cancels.

use serde::{Deserialize, Serialize};

use crate::jet::Real;

/// Fitted global odds ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlackettTheta {
    pub theta: f64,
    pub log_theta_se: f64,
}

impl PlackettTheta {
    /// `exp(ln theta ± 1.96 se)`.
    pub fn ci95(&self) -> (f64, f64) {
        let half = 1.959_963_984_540_054 * self.log_theta_se;
        let lt = self.theta.ln();
        ((lt - half).exp(), (lt + half).exp())
    }

    pub fn ci_excludes_one(&self) -> bool {
        let (lo, hi) = self.ci95();
        lo > 1.0 || hi < 1.0
    }
}

fn parts<T: Real>(u: T, v: T, log_theta: T) -> (T, T, T) {
    let eta = log_theta.exp_m1();
    let d = eta * ((u + v) - u * v * 2.0) * 2.0 + eta * eta * (u - v) * (u - v) + 1.0;
    (eta, d, d.sqrt())
}

/// `C(u, v)` with the association given as `ln theta`.
pub fn cdf<T: Real>(u: T, v: T, log_theta: T) -> T {
    let (eta, _, sd) = parts(u, v, log_theta);
    let a = eta * (u + v) + 1.0;
    if a.value() >= 0.0 {
        u * v * log_theta.exp() * 2.0 / (a + sd)
    } else {
        (a - sd) / (eta * 2.0)
    }
}

/// `∂C/∂v`, the conditional distribution of `U` given `V = v`.
pub fn h_v<T: Real>(u: T, v: T, log_theta: T) -> T {
    let (eta, _, sd) = parts(u, v, log_theta);
    let k = eta * (v - u) - u * 2.0 + 1.0;
    if k.value() > 0.0 {
        u * (-u + 1.0) * log_theta.exp() * 2.0 / (sd * (sd + k))
    } else {
        (sd - k) / (sd * 2.0)
    }
}

/// Plackett copula `C_theta(u, v)`; equals `u v` exactly at `theta = 1`.
pub fn plackett_cdf(u: f64, v: f64, theta: f64) -> f64 {
    assert!(theta > 0.0, "Plackett theta must be positive");
    if theta == 1.0 {
        return u * v;
    }
    if u <= 0.0 || v <= 0.0 {
        return 0.0;
    }
    cdf(u, v, theta.ln()).clamp(0.0, u.min(v))
}

/// Solves `∂C/∂v (u, v) = w` for `u`: the conditional inverse used to sample
/// `U` given `V = v` from a uniform `w`.
pub fn conditional_inverse(w: f64, v: f64, theta: f64) -> f64 {
    if theta == 1.0 {
        return w;
    }
    let a = w * (1.0 - w);
    let b = theta + a * (theta - 1.0).powi(2);
    let c = 2.0 * a * (v * theta * theta + 1.0 - v) + theta * (1.0 - 2.0 * a);
    let d = theta.sqrt() * (theta + 4.0 * a * v * (1.0 - v) * (1.0 - theta).powi(2)).sqrt();
    ((c - (1.0 - 2.0 * w) * d) / (2.0 * b)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Textbook closed form, used only as a reference.
    fn textbook(u: f64, v: f64, t: f64) -> f64 {
        let s = 1.0 + (t - 1.0) * (u + v);
        (s - (s * s - 4.0 * t * (t - 1.0) * u * v).sqrt()) / (2.0 * (t - 1.0))
    }

    #[test]
    fn hand_values() {
        assert_eq!(plackett_cdf(0.3, 0.7, 1.0), 0.3 * 0.7);
        assert!((plackett_cdf(0.5, 0.5, 4.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn agrees_with_textbook_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let t = (rng.random_range(-4.0..4.0f64)).exp();
            if (t - 1.0).abs() < 1e-3 {
                continue;
            }
            assert!((plackett_cdf(u, v, t) - textbook(u, v, t)).abs() < 1e-10);
        }
    }

    #[test]
    fn continuous_at_independence() {
        for &(u, v) in &[(0.2, 0.9), (0.5, 0.5), (0.99, 0.01)] {
            let near = plackett_cdf(u, v, 1.0 + 1e-12);
            assert!((near - u * v).abs() < 1e-12);
        }
    }

    #[test]
    fn h_is_derivative_of_cdf() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let u = rng.random_range(0.05..0.95);
            let v = rng.random_range(0.05..0.95);
            let lt: f64 = rng.random_range(-3.0..3.0);
            let e = 1e-6;
            let fd = (cdf(u, v + e, lt) - cdf(u, v - e, lt)) / (2.0 * e);
            assert!((h_v(u, v, lt) - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn conditional_inverse_inverts_h() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let w = rng.random_range(0.001..0.999);
            let v = rng.random_range(0.001..0.999);
            let t = rng.random_range(-3.0..3.0f64).exp();
            let u = conditional_inverse(w, v, t);
            assert!((h_v(u, v, t.ln()) - w).abs() < 1e-9, "w={w} v={v} t={t}");
        }
    }
}
