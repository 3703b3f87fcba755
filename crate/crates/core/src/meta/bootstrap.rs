use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::wls::regress;
use super::{weights, MetaError, TrialEffects, Weighting};
use crate::rng::substream;

/// Attempts per replicate before it is given up as a shortfall.
const MAX_DRAWS: usize = 10;

/// Percentile bootstrap interval for the WLS R².
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub lower: f64,
    pub upper: f64,
    pub replicates: usize,
    /// Replicates that stayed degenerate after every redraw.
    pub shortfall: usize,
}

/// Quantile with linear interpolation between order statistics (the
/// default definition in R and NumPy). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resamples trials with replacement and takes the 2.5% and 97.5%
/// quantiles of the replicate R² values. A replicate with fewer than 3
/// distinct trials or a constant predictor is redrawn.
pub fn bootstrap_r2_ci(
    effects: &[TrialEffects],
    weighting: Weighting,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapCi, MetaError> {
    let w = weights(effects, weighting)?;
    let x: Vec<f64> = effects.iter().map(|e| e.log_or).collect();
    let y: Vec<f64> = effects.iter().map(|e| e.log_hr).collect();
    if x.iter().all(|&v| v == x[0]) {
        return Err(MetaError::InsufficientVariation);
    }
    let n = effects.len();

    let draws: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let mut idx = vec![0usize; n];
            let mut seen = vec![false; n];
            let (mut bx, mut by, mut bw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for _ in 0..MAX_DRAWS {
                seen.iter_mut().for_each(|s| *s = false);
                for slot in idx.iter_mut() {
                    *slot = rng.random_range(0..n);
                    seen[*slot] = true;
                }
                if seen.iter().filter(|&&s| s).count() < 3 {
                    continue;
                }
                for (k, &i) in idx.iter().enumerate() {
                    bx[k] = x[i];
                    by[k] = y[i];
                    bw[k] = w[i];
                }
                if let Some(m) = regress(&bx, &by, &bw) {
                    return Some(m.r2);
                }
            }
            None
        })
        .collect();

    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    let shortfall = replicates - values.len();
    if values.is_empty() {
        return Err(MetaError::InsufficientVariation);
    }
    if shortfall > 0 {
        warn!("{shortfall} of {replicates} bootstrap replicates stayed degenerate after {MAX_DRAWS} draws");
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        lower: quantile(&values, 0.025),
        upper: quantile(&values, 0.975),
        replicates: values.len(),
        shortfall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eff(x: f64, y: f64) -> TrialEffects {
        TrialEffects {
            trial_id: format!("t{x}"),
            log_or: x,
            log_or_se: 0.3,
            log_hr: y,
            log_hr_se: 0.1,
            n: 100,
        }
    }

    #[test]
    fn quantile_matches_r_type_7() {
        let v = [1.0, 2.0, 3.0, 4.0, 10.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.975) - 9.4).abs() < 1e-12);
        assert!((quantile(&v, 0.025) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_give_unit_interval() {
        let e: Vec<_> = (0..6).map(|i| eff(i as f64 * 0.3, 0.1 - 0.8 * i as f64 * 0.3)).collect();
        let ci = bootstrap_r2_ci(&e, Weighting::InverseVariance, 500, 3).unwrap();
        assert!((ci.lower - 1.0).abs() < 1e-12 && (ci.upper - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let e = vec![eff(0.1, 0.2), eff(0.7, 0.1), eff(1.1, 0.25), eff(1.5, 0.05), eff(0.4, -0.1)];
        let a = bootstrap_r2_ci(&e, Weighting::SampleSize, 2000, 42).unwrap();
        let b = bootstrap_r2_ci(&e, Weighting::SampleSize, 2000, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.lower >= 0.0 && a.upper <= 1.0 && a.lower <= a.upper);
    }

    #[test]
    fn identical_trials_fail() {
        let e = vec![eff(0.5, 0.2), eff(0.5, 0.2), eff(0.5, 0.2)];
        assert_eq!(
            bootstrap_r2_ci(&e, Weighting::SampleSize, 100, 1),
            Err(MetaError::InsufficientVariation)
        );
    }
}
