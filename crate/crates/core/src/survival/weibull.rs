use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::SurvivalError;
use crate::jet::{Jet, Real};
use crate::optim::{maximize, NewtonOptions};
use crate::reconstruct::SubjectRecord;

/// Weibull proportional-hazards fit,
/// `S(t | z) = exp(-(t / scale)^shape * exp(gamma * z))` with `z` the
/// experimental-arm indicator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeibullFit {
    pub shape: f64,
    pub scale: f64,
    pub gamma: f64,
    /// Covariance of `(ln shape, ln scale, gamma)`.
    pub covariance: [[f64; 3]; 3],
    pub loglik: f64,
    pub iterations: usize,
}

impl WeibullFit {
    pub fn gamma_se(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }
}

/// Log survival and log density at time `t` for covariate `z`.
///
/// Event times of exactly zero have no density; callers clamp them.
pub(crate) fn weibull_log_terms<T: Real>(log_shape: T, log_scale: T, gamma: T, t: f64, z: f64) -> (T, T) {
    if t <= 0.0 {
        return (T::constant(0.0), T::constant(f64::NEG_INFINITY));
    }
    let ln_t = t.ln();
    let log_h = log_shape.exp() * (log_scale * -1.0 + ln_t) + gamma * z;
    let cum = log_h.exp();
    let log_f = log_shape + log_h - cum - ln_t;
    (-cum, log_f)
}

/// Smallest event time used in the density, in months.
pub(crate) const MIN_EVENT_TIME: f64 = 1e-6;

fn loglik<T: Real>(p: [T; 3], data: &[(f64, bool, f64)]) -> T {
    let mut ll = T::constant(0.0);
    for &(t, event, z) in data {
        if event {
            ll = ll + weibull_log_terms(p[0], p[1], p[2], t.max(MIN_EVENT_TIME), z).1;
        } else if t > 0.0 {
            ll = ll + weibull_log_terms(p[0], p[1], p[2], t, z).0;
        }
    }
    ll
}

fn prepare(ipd: &[SubjectRecord]) -> Vec<(f64, bool, f64)> {
    ipd.iter().map(|s| (s.time, s.event, s.arm.indicator())).collect()
}

/// Log-likelihood at `(shape, scale, gamma)`.
pub fn weibull_loglik(ipd: &[SubjectRecord], shape: f64, scale: f64, gamma: f64) -> f64 {
    loglik([shape.ln(), scale.ln(), gamma], &prepare(ipd))
}

/// Censored-data maximum likelihood by Newton-Raphson on
/// `(ln shape, ln scale, gamma)`.
pub fn weibull_fit(ipd: &[SubjectRecord]) -> Result<WeibullFit, SurvivalError> {
    if ipd.is_empty() {
        return Err(SurvivalError::EmptyInput);
    }
    let data = prepare(ipd);
    let mut event_times: Vec<f64> = data.iter().filter(|d| d.1).map(|d| d.0).collect();
    if event_times.is_empty() {
        return Err(SurvivalError::NoEvents);
    }
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    if event_times.len() < 2 {
        return Err(SurvivalError::ShapeUnbounded);
    }
    let has_both_arms = data.iter().any(|d| d.2 == 1.0) && data.iter().any(|d| d.2 == 0.0);

    let events = data.iter().filter(|d| d.1).count() as f64;
    let exposure: f64 = data.iter().map(|d| d.0).sum();
    let x0 = DVector::from_vec(vec![0.0, (exposure / events).ln(), 0.0]);

    let full = |x: &DVector<f64>| {
        let mut p = [Jet::<3>::var(x[0], 0), Jet::var(x[1], 1), Jet::var(x[2], 2)];
        if !has_both_arms {
            p[2] = Jet::constant(0.0);
        }
        let j = loglik(p, &data);
        if !j.v.is_finite() {
            return None;
        }
        let mut h = DMatrix::from_fn(3, 3, |a, b| j.h[a][b]);
        if !has_both_arms {
            h[(2, 2)] = -1.0;
        }
        Some((j.v, DVector::from_row_slice(&j.g), h))
    };
    let value = |x: &DVector<f64>| {
        let gamma = if has_both_arms { x[2] } else { 0.0 };
        loglik([x[0], x[1], gamma], &data)
    };
    let opts = NewtonOptions {
        max_iter: 100,
        gradient_tol: 1e-8,
        max_step: 2.0,
    };
    let res = maximize(x0, full, value, opts).map_err(|f| SurvivalError::NonConvergence {
        iterations: f.iterations,
        gradient_norm: f.gradient_norm,
    })?;
    if res.x[0] > 6.0 {
        // Shape above e^6 is a step function in disguise.
        return Err(SurvivalError::ShapeUnbounded);
    }
    let cov = res.covariance().ok_or(SurvivalError::NonConvergence {
        iterations: res.iterations,
        gradient_norm: res.gradient_norm(),
    })?;
    let mut covariance = [[0.0; 3]; 3];
    for (a, row) in covariance.iter_mut().enumerate() {
        for (b, c) in row.iter_mut().enumerate() {
            *c = if !has_both_arms && (a == 2 || b == 2) { 0.0 } else { cov[(a, b)] };
        }
    }
    Ok(WeibullFit {
        shape: res.x[0].exp(),
        scale: res.x[1].exp(),
        gamma: if has_both_arms { res.x[2] } else { 0.0 },
        covariance,
        loglik: res.value,
        iterations: res.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Arm, MrdStatus};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Exp, Weibull};

    fn rec(arm: Arm, t: f64, e: bool) -> SubjectRecord {
        SubjectRecord::new("T", arm, MrdStatus::Positive, t, e)
    }

    #[test]
    fn exponential_data_gives_unit_shape() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let exp = Exp::new(1.0 / 12.0).unwrap();
        let ipd: Vec<_> = (0..2000)
            .map(|i| {
                let arm = if i % 2 == 0 { Arm::Experimental } else { Arm::Control };
                rec(arm, exp.sample(&mut rng), true)
            })
            .collect();
        let fit = weibull_fit(&ipd).unwrap();
        assert!((0.95..=1.05).contains(&fit.shape), "shape {}", fit.shape);
        assert!(fit.gamma.abs() < 3.0 * fit.gamma_se());
    }

    #[test]
    fn recovers_parameters_under_censoring() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = Weibull::new(20.0, 1.5).unwrap();
        let ipd: Vec<_> = (0..3000)
            .map(|i| {
                let arm = if i % 2 == 0 { Arm::Experimental } else { Arm::Control };
                // Hazard ratio 0.5 on the experimental arm: stretch times.
                let mut t: f64 = w.sample(&mut rng);
                if arm == Arm::Experimental {
                    t *= 2f64.powf(1.0 / 1.5);
                }
                if t > 30.0 {
                    rec(arm, 30.0, false)
                } else {
                    rec(arm, t, true)
                }
            })
            .collect();
        let fit = weibull_fit(&ipd).unwrap();
        assert!((fit.shape - 1.5).abs() < 0.1);
        assert!((fit.scale - 20.0).abs() < 1.5);
        assert!((fit.gamma - 0.5f64.ln()).abs() < 0.12);
    }

    #[test]
    fn optimum_beats_every_grid_point() {
        let ipd: Vec<_> = [(2.0, true), (3.5, true), (5.0, false), (8.0, true), (9.5, true), (12.0, false)]
            .iter()
            .enumerate()
            .map(|(i, &(t, e))| rec(if i % 2 == 0 { Arm::Experimental } else { Arm::Control }, t, e))
            .collect();
        let fit = weibull_fit(&ipd).unwrap();
        let best = weibull_loglik(&ipd, fit.shape, fit.scale, fit.gamma);
        assert!((best - fit.loglik).abs() < 1e-9);
        for i in 0..20 {
            for j in 0..20 {
                for k in 0..10 {
                    let shape = 0.3 + 0.2 * i as f64;
                    let scale = 2.0 + 1.0 * j as f64;
                    let gamma = -2.0 + 0.4 * k as f64;
                    assert!(weibull_loglik(&ipd, shape, scale, gamma) <= best + 1e-12);
                }
            }
        }
    }

    #[test]
    fn symmetric_arms_have_no_effect() {
        let ipd: Vec<_> = [(1.0, true), (4.0, true), (6.0, false), (9.0, true)]
            .iter()
            .flat_map(|&(t, e)| [rec(Arm::Experimental, t, e), rec(Arm::Control, t, e)])
            .collect();
        assert!(weibull_fit(&ipd).unwrap().gamma.abs() < 1e-8);
    }

    #[test]
    fn identical_event_times_are_degenerate() {
        let ipd: Vec<_> = (0..6)
            .map(|i| rec(if i % 2 == 0 { Arm::Experimental } else { Arm::Control }, 5.0, true))
            .collect();
        assert_eq!(weibull_fit(&ipd), Err(SurvivalError::ShapeUnbounded));
        let none = vec![rec(Arm::Control, 5.0, false)];
        assert_eq!(weibull_fit(&none), Err(SurvivalError::NoEvents));
    }
}
