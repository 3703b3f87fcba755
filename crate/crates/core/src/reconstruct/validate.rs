use serde::Serialize;

use super::SubjectRecord;
use crate::ingest::CurveDataset;
use crate::survival::{cox_loghr, km_estimate};

const KS_ADVISORY: &str = "KS p-value is advisory: with many curve points trivial deviations become significant";

/// Goodness of a reconstruction against its source curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionValidation {
    pub n_points: usize,
    pub rmse: f64,
    pub mae: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub refit_hr: Option<f64>,
    pub reported_hr: Option<f64>,
    pub advisory: String,
}

/// Hazard-ratio quality check: refit the Cox model on this stratum plus the
/// caller-supplied comparison stratum.
#[derive(Clone, Copy, Debug)]
pub struct HrCheck<'a> {
    pub reported_hr: f64,
    pub paired: &'a [SubjectRecord],
}

/// Compares the reconstructed Kaplan-Meier curve with the input curve at the
/// input times. Always returns; a failed HR refit leaves `refit_hr` empty.
pub fn validate(
    curve: &CurveDataset,
    ipd: &[SubjectRecord],
    hr_check: Option<HrCheck<'_>>,
) -> ReconstructionValidation {
    let km = km_estimate(ipd).ok();
    let input: Vec<f64> = curve.points.iter().map(|p| p.survival).collect();
    let rebuilt: Vec<f64> = curve
        .points
        .iter()
        .map(|p| km.as_ref().map_or(1.0, |k| k.at(p.time)))
        .collect();
    let n = input.len().max(1) as f64;
    let (sq, abs) = input
        .iter()
        .zip(&rebuilt)
        .fold((0.0, 0.0), |(sq, abs), (a, b)| (sq + (a - b).powi(2), abs + (a - b).abs()));
    let (ks_statistic, ks_p_value) = ks_two_sample(&input, &rebuilt);

    let refit_hr = hr_check.and_then(|check| {
        let mut all = ipd.to_vec();
        all.extend_from_slice(check.paired);
        cox_loghr(&all).ok().map(|e| e.estimate.exp())
    });
    ReconstructionValidation {
        n_points: input.len(),
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        ks_statistic,
        ks_p_value,
        refit_hr,
        reported_hr: hr_check.map(|c| c.reported_hr),
        advisory: KS_ADVISORY.to_string(),
    }
}

/// Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (0.0, 1.0);
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// P(K > x) for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Jacobi theta form converges quickly for small x.
        let coeff = (2.0 * std::f64::consts::PI).sqrt() / x;
        let w = -std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let cdf: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (w * m * m).exp()
            })
            .sum::<f64>()
            * coeff;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}
