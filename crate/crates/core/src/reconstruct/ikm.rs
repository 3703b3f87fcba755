//! Interval-wise reconstruction of patient records from a digitized curve
//! and its numbers-at-risk table.
//!
//! Notation: clicks `(T[k], S[k])` after cleaning, at-risk rows
//! `(t_i, n_i)`. Interval `i` covers clicks with `t_i <= T[k] < t_{i+1}`; a
//! flat click is inserted at every `t_i` that is not already a click so each
//! interval starts on a click. Within interval `i`, starting with `n` subjects
//! at risk and reconstructed survival `KM_last` at the last event click:
//!
//! ```text
//! censored   c_i = round(S[t_{i+1}] / S[t_i] * n_i - n_{i+1})        initial guess
//! cens times u_j = T_lo + j * (T_hi_end - T_lo) / (c_i + 1),  j = 1..c_i
//! events     d_k = round(n_k * (1 - S[k] / KM_last))
//! survival   KM_k = KM_last * (1 - d_k / n_k)
//! at risk    n_{k+1} = n_k - d_k - #{u_j in [T[k], T[k+1])}
//! update     c_i += n_hat(t_{i+1}) - n_{i+1}      until n_hat(t_{i+1}) == n_{i+1}
//! ```
//!
//! The update repeats while the reconstructed count at the next at-risk time
//! is above the table, or below it with censorings left to remove. In the
//! final interval, whose end count is unknown, censorings follow the average
//! per-month censoring rate of the earlier intervals; subjects still at risk
//! after the last click are censored at the last click time. Events at a click
//! precede censorings at the same time.

use serde::Serialize;

use super::{preprocess, ReconstructError, Repair, SubjectRecord};
use crate::ingest::{CurveDataset, CurvePoint};

const MAX_ADJUSTMENTS: usize = 200;

/// Per-interval audit of the reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalTrace {
    pub start_time: f64,
    pub end_time: f64,
    pub n_start: u64,
    /// At-risk count the interval was reconciled to; `None` for the last one.
    pub n_target: Option<u64>,
    pub n_end: u64,
    pub events: u64,
    pub censored: u64,
    pub adjustments: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub subjects: Vec<SubjectRecord>,
    pub intervals: Vec<IntervalTrace>,
    pub repairs: Vec<Repair>,
}

struct StepResult {
    events: Vec<u64>,
    censor_times: Vec<f64>,
    n_end: u64,
    km_last: f64,
}

/// Run one interval forward for a given number of censorings.
fn simulate_interval(
    pts: &[CurvePoint],
    lo: usize,
    hi: usize,
    window_end: f64,
    n_start: u64,
    km_last: f64,
    n_censor: u64,
) -> StepResult {
    let t0 = pts[lo].time;
    let width = window_end - t0;
    let planned: Vec<f64> = (1..=n_censor)
        .map(|j| t0 + j as f64 * width / (n_censor as f64 + 1.0))
        .collect();
    let mut cursor = 0;
    let mut n = n_start;
    let mut km = km_last;
    let mut events = Vec::with_capacity(hi - lo + 1);
    let mut censor_times = Vec::with_capacity(planned.len());
    for k in lo..=hi {
        let d = if n == 0 || km <= 0.0 {
            0
        } else {
            let raw = (n as f64 * (1.0 - pts[k].survival / km)).round();
            raw.clamp(0.0, n as f64) as u64
        };
        if d > 0 {
            km *= 1.0 - d as f64 / n as f64;
        }
        n -= d;
        events.push(d);
        let next_time = if k + 1 < pts.len() { pts[k + 1].time } else { f64::INFINITY };
        while cursor < planned.len() && planned[cursor] < next_time {
            if planned[cursor] >= pts[k].time && n > 0 {
                censor_times.push(planned[cursor]);
                n -= 1;
            }
            cursor += 1;
        }
    }
    StepResult {
        events,
        censor_times,
        n_end: n,
        km_last: km,
    }
}

fn check_at_risk(curve: &CurveDataset) -> Result<(), ReconstructError> {
    if curve.at_risk.is_empty() {
        return Err(ReconstructError::MissingAtRisk);
    }
    for w in curve.at_risk.windows(2) {
        if w[1].time <= w[0].time {
            return Err(ReconstructError::UnorderedAtRisk(w[1].time));
        }
        if w[1].n_at_risk > w[0].n_at_risk {
            return Err(ReconstructError::InconsistentAtRisk {
                time: w[1].time,
                count: w[1].n_at_risk,
                prior: w[0].n_at_risk,
            });
        }
    }
    Ok(())
}

fn survival_at(pts: &[CurvePoint], t: f64) -> f64 {
    pts.iter()
        .take_while(|p| p.time <= t)
        .last()
        .map_or(1.0, |p| p.survival)
}

/// Reconstructs patient records for one stratum.
pub fn reconstruct_ipd(curve: &CurveDataset) -> Result<Reconstruction, ReconstructError> {
    let cleaned = preprocess(&curve.points)?;
    let mut pts = cleaned.points;
    if pts.len() < 2 {
        return Err(ReconstructError::DegenerateCurve(pts.len()));
    }
    check_at_risk(curve)?;
    let n0 = curve.at_risk[0].n_at_risk.min(curve.total_n);
    if n0 == 0 {
        return Err(ReconstructError::ZeroSampleSize);
    }
    let t_last = pts[pts.len() - 1].time;

    // At-risk rows that open an interval containing at least the row's click.
    let mut rows: Vec<(f64, u64)> = curve
        .at_risk
        .iter()
        .filter(|r| r.time < t_last)
        .map(|r| (r.time, r.n_at_risk.min(n0)))
        .collect();
    match rows.first_mut() {
        Some(first) if first.0 == 0.0 => first.1 = n0,
        _ => rows.insert(0, (0.0, n0)),
    }
    for &(t, _) in &rows {
        if !pts.iter().any(|p| p.time == t) {
            let s = survival_at(&pts, t);
            let at = pts.partition_point(|p| p.time < t);
            pts.insert(at, CurvePoint::new(t, s));
        }
    }
    let lower: Vec<usize> = rows
        .iter()
        .map(|&(t, _)| pts.partition_point(|p| p.time < t))
        .collect();

    let key = &curve.key;
    let mut subjects = Vec::with_capacity(n0 as usize);
    let mut intervals = Vec::with_capacity(rows.len());
    let mut n_cur = n0;
    let mut km_last = 1.0;
    let mut censored_so_far = 0u64;

    for i in 0..rows.len() {
        let lo = lower[i];
        let is_last = i + 1 == rows.len();
        let (hi, window_end) = if is_last {
            (pts.len() - 1, t_last)
        } else {
            (lower[i + 1] - 1, pts[lower[i + 1]].time)
        };

        let (result, n_target, adjustments) = if is_last {
            let span = pts[lo].time - pts[0].time;
            let rate = if span > 0.0 {
                censored_so_far as f64 / span
            } else {
                0.0
            };
            let n_censor = ((rate * (window_end - pts[lo].time)).round() as u64).min(n_cur);
            let r = simulate_interval(&pts, lo, hi, window_end, n_cur, km_last, n_censor);
            (r, None, 0)
        } else {
            let target = rows[i + 1].1;
            let s_lo = pts[lo].survival;
            let guess = if s_lo > 0.0 {
                (pts[lower[i + 1]].survival / s_lo * n_cur as f64 - target as f64).round()
            } else {
                0.0
            };
            let mut n_censor = (guess.max(0.0) as u64).min(n_cur);
            let mut tried = Vec::new();
            let mut best: Option<(u64, StepResult)> = None;
            let mut adjustments = 0;
            loop {
                let r = simulate_interval(&pts, lo, hi, window_end, n_cur, km_last, n_censor);
                let diff = r.n_end as i64 - target as i64;
                tried.push(n_censor);
                let better = best
                    .as_ref()
                    .is_none_or(|(d, _)| diff.unsigned_abs() < *d);
                let next = if diff > 0 {
                    Some((n_censor + diff as u64).min(n_cur))
                } else if diff < 0 && n_censor > 0 {
                    Some(n_censor.saturating_sub(diff.unsigned_abs()))
                } else {
                    None
                };
                if better {
                    best = Some((diff.unsigned_abs(), r));
                }
                match next {
                    Some(c) if !tried.contains(&c) && adjustments < MAX_ADJUSTMENTS => {
                        n_censor = c;
                        adjustments += 1;
                    }
                    _ => break,
                }
            }
            let (_, r) = best.expect("at least one pass");
            (r, Some(target), adjustments)
        };

        let mut events = 0;
        for (offset, &d) in result.events.iter().enumerate() {
            let t = pts[lo + offset].time;
            for _ in 0..d {
                subjects.push(SubjectRecord::new(&key.trial_id, key.arm, key.status, t, true));
            }
            events += d;
        }
        for &t in &result.censor_times {
            subjects.push(SubjectRecord::new(&key.trial_id, key.arm, key.status, t, false));
        }
        let censored = result.censor_times.len() as u64;
        censored_so_far += censored;
        intervals.push(IntervalTrace {
            start_time: pts[lo].time,
            end_time: window_end,
            n_start: n_cur,
            n_target,
            n_end: result.n_end,
            events,
            censored,
            adjustments,
        });
        n_cur = result.n_end;
        km_last = result.km_last;
    }
    for _ in 0..n_cur {
        subjects.push(SubjectRecord::new(&key.trial_id, key.arm, key.status, t_last, false));
    }
    subjects.sort_by(|a, b| a.time.total_cmp(&b.time).then(b.event.cmp(&a.event)));
    Ok(Reconstruction {
        subjects,
        intervals,
        repairs: cleaned.repairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Arm, AtRiskRow, MrdStatus, StratumKey};
    use crate::survival::km_estimate;

    fn dataset(points: &[(f64, f64)], at_risk: &[(f64, u64)], total_n: u64) -> CurveDataset {
        CurveDataset::new(
            StratumKey::new("T", Arm::Control, MrdStatus::Positive),
            points.iter().map(|&(t, s)| CurvePoint::new(t, s)).collect(),
            at_risk.iter().map(|&(t, n)| AtRiskRow::new(t, n)).collect(),
            total_n,
        )
        .unwrap()
    }

    #[test]
    fn flat_curve_censors_everyone_at_the_end() {
        let ds = dataset(&[(0.0, 1.0), (12.0, 1.0), (24.0, 1.0)], &[(0.0, 50), (12.0, 50), (24.0, 50)], 50);
        let rec = reconstruct_ipd(&ds).unwrap();
        assert_eq!(rec.subjects.len(), 50);
        assert!(rec.subjects.iter().all(|s| !s.event && s.time == 24.0));
    }

    #[test]
    fn curve_reaching_zero_gives_all_events() {
        for risk in [&[(0.0, 10)][..], &[(0.0, 10), (5.0, 10)][..]] {
            let ds = dataset(&[(0.0, 1.0), (5.0, 0.5), (10.0, 0.0)], risk, 10);
            let rec = reconstruct_ipd(&ds).unwrap();
            assert_eq!(rec.subjects.len(), 10);
            assert!(rec.subjects.iter().all(|s| s.event), "{risk:?}");
            assert_eq!(rec.subjects.iter().filter(|s| s.time == 5.0).count(), 5);
        }
    }

    #[test]
    fn size_follows_smaller_of_table_and_total() {
        let ds = dataset(&[(0.0, 1.0), (6.0, 0.9), (12.0, 0.8)], &[(0.0, 100), (6.0, 80)], 60);
        assert_eq!(reconstruct_ipd(&ds).unwrap().subjects.len(), 60);
        let ds = dataset(&[(0.0, 1.0), (6.0, 0.9), (12.0, 0.8)], &[(0.0, 100), (6.0, 80)], 500);
        assert_eq!(reconstruct_ipd(&ds).unwrap().subjects.len(), 100);
    }

    #[test]
    fn increasing_at_risk_is_rejected() {
        let ds = dataset(&[(0.0, 1.0), (6.0, 0.9), (12.0, 0.8)], &[(0.0, 100), (6.0, 120)], 100);
        assert!(matches!(
            reconstruct_ipd(&ds),
            Err(ReconstructError::InconsistentAtRisk { count: 120, prior: 100, .. })
        ));
    }

    #[test]
    fn single_point_curve_is_degenerate() {
        let mut ds = dataset(&[(0.0, 1.0), (6.0, 0.9)], &[(0.0, 10)], 10);
        ds.points.truncate(1);
        assert_eq!(reconstruct_ipd(&ds), Err(ReconstructError::DegenerateCurve(1)));
    }

    #[test]
    fn interval_counts_reconcile_with_table() {
        // 100 subjects, steady decline with censoring between the table rows.
        let points: Vec<(f64, f64)> = (0..=24).map(|k| (k as f64, 0.97f64.powi(k))).collect();
        let risk = [(0.0, 100), (6.5, 78), (12.5, 60), (18.5, 45)];
        let ds = dataset(&points, &risk, 100);
        let rec = reconstruct_ipd(&ds).unwrap();
        assert_eq!(rec.subjects.len(), 100);
        for (trace, next) in rec.intervals.iter().zip(risk.iter().skip(1)) {
            assert!(trace.n_end.abs_diff(next.1) <= 1, "{trace:?}");
            assert_eq!(trace.n_start - trace.n_end, trace.events + trace.censored);
        }
        let km = km_estimate(&rec.subjects).unwrap();
        for &(t, s) in &points {
            assert!((km.at(t) - s).abs() < 0.02, "t={t}: {} vs {s}", km.at(t));
        }
        assert!(rec.subjects.iter().all(|s| s.time > 0.0));
    }
}
