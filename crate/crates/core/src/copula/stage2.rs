use serde::{Deserialize, Serialize};

use super::CopulaError;
use crate::meta::TrialEffects;

/// A squared correlation with its interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquaredCI {
    pub r2: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Fit {
    pub correlation: f64,
    pub correlation_ci: (f64, f64),
    pub r2: SquaredCI,
    pub n_trials: usize,
}

/// Squares a correlation and its interval. An interval straddling zero maps
/// to `[0, max(lo², hi²)]`, since the square of anything inside it can be 0.
pub fn square_correlation_ci(rho: f64, ci: (f64, f64)) -> SquaredCI {
    let (lo, hi) = ci;
    let (a, b) = (lo * lo, hi * hi);
    let (lower, upper) = if lo < 0.0 && hi > 0.0 {
        (0.0, a.max(b))
    } else {
        (a.min(b), a.max(b))
    };
    SquaredCI {
        r2: rho * rho,
        lower,
        upper,
    }
}

/// Weighted Pearson correlation between the treatment effects on the
/// surrogate and on the true endpoint, weighted by the inverse variance of
/// the log OR, with a Fisher-z interval on `n_trials - 3` degrees of freedom.
pub fn fit_stage2(effects: &[TrialEffects]) -> Result<Stage2Fit, CopulaError> {
    let n = effects.len();
    if n < 3 {
        return Err(CopulaError::TooFewTrials(n));
    }
    let w: Vec<f64> = effects.iter().map(|e| e.log_or_se.powi(-2)).collect();
    if w.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(CopulaError::DegenerateEffects("a log OR standard error is zero or non-finite"));
    }
    let sw: f64 = w.iter().sum();
    let mean = |f: fn(&TrialEffects) -> f64| {
        effects.iter().zip(&w).map(|(e, w)| w * f(e)).sum::<f64>() / sw
    };
    let mx = mean(|e| e.log_or);
    let my = mean(|e| e.log_hr);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (e, w) in effects.iter().zip(&w) {
        let (dx, dy) = (e.log_or - mx, e.log_hr - my);
        sxx += w * dx * dx;
        syy += w * dy * dy;
        sxy += w * dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(CopulaError::DegenerateEffects("treatment effects do not vary across trials"));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let ci = if n == 3 {
        (-1.0, 1.0)
    } else {
        let z = r.atanh();
        let half = 1.959_963_984_540_054 / ((n - 3) as f64).sqrt();
        ((z - half).tanh(), (z + half).tanh())
    };
    Ok(Stage2Fit {
        correlation: r,
        correlation_ci: ci,
        r2: square_correlation_ci(r, ci),
        n_trials: n,
    })
}
