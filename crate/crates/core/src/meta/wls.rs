use serde::Serialize;

use super::{bootstrap_r2_ci, weights, BootstrapCi, MetaError, TrialEffects, Weighting};

/// Weighted least squares of log HR on log OR.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// `1 - SSE_w / SST_w`, both sums weighted and centered at the weighted
    /// mean. Zero when the responses do not vary.
    pub r2: f64,
    pub weighting: Weighting,
    pub n_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WlsResult {
    pub fit: WlsFit,
    pub ci: BootstrapCi,
}

pub(super) struct Moments {
    pub sw: f64,
    pub mx: f64,
    pub sxx: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Closed-form weighted regression; `None` if the predictor is constant.
pub(super) fn regress(x: &[f64], y: &[f64], w: &[f64]) -> Option<Moments> {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for ((x, y), w) in x.iter().zip(y).zip(w) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
        syy += w * (y - my) * (y - my);
    }
    // Relative test so that rescaled predictors behave alike.
    let scale = x.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if sxx <= sw * (scale * 1e-12).powi(2) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 0.0 };
    Some(Moments {
        sw,
        mx,
        sxx,
        slope,
        intercept,
        r2,
    })
}

pub fn wls_fit(effects: &[TrialEffects], weighting: Weighting) -> Result<WlsFit, MetaError> {
    let w = weights(effects, weighting)?;
    let x: Vec<f64> = effects.iter().map(|e| e.log_or).collect();
    let y: Vec<f64> = effects.iter().map(|e| e.log_hr).collect();
    let m = regress(&x, &y, &w).ok_or(MetaError::ConstantPredictor)?;
    Ok(WlsFit {
        slope: m.slope,
        intercept: m.intercept,
        r2: m.r2,
        weighting,
        n_trials: effects.len(),
    })
}

/// Point fit plus percentile bootstrap interval for R².
pub fn wls_with_ci(
    effects: &[TrialEffects],
    weighting: Weighting,
    replicates: usize,
    seed: u64,
) -> Result<WlsResult, MetaError> {
    Ok(WlsResult {
        fit: wls_fit(effects, weighting)?,
        ci: bootstrap_r2_ci(effects, weighting, replicates, seed)?,
    })
}
