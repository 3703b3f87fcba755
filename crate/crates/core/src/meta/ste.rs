use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::wls::regress;
use super::{weights, MetaError, TrialEffects, Weighting};

/// Fewer trials than this make the prediction band unreliable.
pub const SMALL_N: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SteOutcome {
    Estimable { log_or: f64 },
    NotEstimable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SteResult {
    pub outcome: SteOutcome,
    pub weighting: Weighting,
    pub n_trials: usize,
    pub small_n: bool,
}

impl SteResult {
    pub fn log_or(&self) -> Option<f64> {
        match self.outcome {
            SteOutcome::Estimable { log_or } => Some(log_or),
            SteOutcome::NotEstimable => None,
        }
    }
}

/// Surrogate threshold effect: the smallest log OR (benefit side, > 0) at
/// which the upper 95% prediction limit for the log HR of a new trial drops
/// below 0.
///
/// Weights are normalized to mean 1 and the new trial is given weight 1, so
/// the prediction variance is `s² (1 + 1/Σw + (x - x̄)²/Sxx)` with `s²` the
/// weighted residual variance on `n - 2` degrees of freedom. The search runs
/// over `[0, 10 * max(range of log OR, max |log OR|)]`.
pub fn ste(effects: &[TrialEffects], weighting: Weighting) -> Result<SteResult, MetaError> {
    let raw = weights(effects, weighting)?;
    let n = effects.len();
    let mean_w = raw.iter().sum::<f64>() / n as f64;
    let w: Vec<f64> = raw.iter().map(|w| w / mean_w).collect();
    let x: Vec<f64> = effects.iter().map(|e| e.log_or).collect();
    let y: Vec<f64> = effects.iter().map(|e| e.log_hr).collect();
    let m = regress(&x, &y, &w).ok_or(MetaError::ConstantPredictor)?;

    let sse: f64 = x
        .iter()
        .zip(&y)
        .zip(&w)
        .map(|((x, y), w)| w * (y - m.intercept - m.slope * x).powi(2))
        .sum();
    let s = (sse / (n - 2) as f64).sqrt();
    let tq = StudentsT::new(0.0, 1.0, (n - 2) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let upper = |x0: f64| {
        let se = s * (1.0 + 1.0 / m.sw + (x0 - m.mx).powi(2) / m.sxx).sqrt();
        m.intercept + m.slope * x0 + tq * se
    };

    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let reach = 10.0 * (hi - lo).max(lo.abs()).max(hi.abs());
    let outcome = threshold(upper, reach);
    Ok(SteResult {
        outcome,
        weighting,
        n_trials: n,
        small_n: n < SMALL_N,
    })
}

/// First zero crossing of the convex function `u` on `[0, reach]`.
fn threshold(u: impl Fn(f64) -> f64, reach: f64) -> SteOutcome {
    if u(0.0) < 0.0 {
        return SteOutcome::Estimable { log_or: 0.0 };
    }
    // Golden-section search for the minimum.
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, reach);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while b - a > 1e-12 * reach.max(1.0) {
        if u(c) < u(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let argmin = (a + b) / 2.0;
    if u(argmin) >= 0.0 {
        return SteOutcome::NotEstimable;
    }
    let (mut lo, mut hi) = (0.0, argmin);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if u(mid) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    SteOutcome::Estimable { log_or: hi }
}
