use serde::Serialize;

use super::SurvivalError;
use crate::reconstruct::SubjectRecord;

/// Product-limit estimate, stored at t = 0 and at each event time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub n_at_risk: Vec<u64>,
    pub n_events: Vec<u64>,
}

impl KmCurve {
    /// Right-continuous step function; beyond the last time the last value holds.
    pub fn at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }

    /// First time at which the curve drops to 0.5 or below.
    pub fn median(&self) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.survival)
            .find(|(_, &s)| s <= 0.5)
            .map(|(&t, _)| t)
    }
}

pub fn km_estimate(ipd: &[SubjectRecord]) -> Result<KmCurve, SurvivalError> {
    let pairs: Vec<(f64, bool)> = ipd.iter().map(|s| (s.time, s.event)).collect();
    km_from_pairs(&pairs)
}

/// Kaplan-Meier from `(time, event)` pairs. At tied times events are taken
/// to occur before censorings.
pub fn km_from_pairs(pairs: &[(f64, bool)]) -> Result<KmCurve, SurvivalError> {
    if pairs.is_empty() {
        return Err(SurvivalError::EmptyInput);
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut curve = KmCurve {
        times: vec![0.0],
        survival: vec![1.0],
        n_at_risk: vec![sorted.len() as u64],
        n_events: vec![0],
    };
    let mut at_risk = sorted.len() as u64;
    let mut s = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let mut events = 0;
        let mut total = 0;
        while i < sorted.len() && sorted[i].0 == t {
            events += u64::from(sorted[i].1);
            total += 1;
            i += 1;
        }
        if events > 0 {
            s *= 1.0 - events as f64 / at_risk as f64;
            if t == 0.0 {
                curve.survival[0] = s;
                curve.n_events[0] = events;
            } else {
                curve.times.push(t);
                curve.survival.push(s);
                curve.n_at_risk.push(at_risk);
                curve.n_events.push(events);
            }
        }
        at_risk -= total;
    }
    Ok(curve)
}

/// Median follow-up by the reverse Kaplan-Meier method: censoring is the
/// event of interest.
pub fn median_followup(ipd: &[SubjectRecord]) -> Result<f64, SurvivalError> {
    let pairs: Vec<(f64, bool)> = ipd.iter().map(|s| (s.time, !s.event)).collect();
    let curve = km_from_pairs(&pairs)?;
    curve.median().ok_or_else(|| SurvivalError::MedianUndefined {
        upper_bound: pairs.iter().map(|p| p.0).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn km(pairs: &[(f64, bool)]) -> KmCurve {
        km_from_pairs(pairs).unwrap()
    }

    #[test]
    fn hand_product_limit() {
        let c = km(&[(1.0, true), (2.0, true), (3.0, false)]);
        assert!((c.at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.at(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.at(1.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.at(0.5), 1.0);
        assert_eq!(c.at(100.0), c.at(3.0));
    }

    #[test]
    fn all_censored_is_flat() {
        let c = km(&[(1.0, false), (2.0, false), (3.0, false)]);
        assert_eq!(c.survival, vec![1.0]);
        assert_eq!(c.at(10.0), 1.0);
    }

    #[test]
    fn single_event_drops_to_zero() {
        let c = km(&[(5.0, true)]);
        assert_eq!(c.at(5.0), 0.0);
        assert_eq!(c.at(4.999), 1.0);
    }

    #[test]
    fn events_precede_censoring_at_ties() {
        // 4 at risk at t=2: one event, one censoring at the same time.
        let c = km(&[(1.0, false), (2.0, true), (2.0, false), (3.0, true), (4.0, false)]);
        assert!((c.at(2.0) - 0.75).abs() < 1e-15);
        assert!((c.at(3.0) - 0.75 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_input_fails() {
        assert_eq!(km_from_pairs(&[]), Err(SurvivalError::EmptyInput));
    }

    #[test]
    fn median_followup_cases() {
        use crate::ingest::{Arm, MrdStatus};
        let rec = |t: f64, e: bool| {
            SubjectRecord::new("T", Arm::Control, MrdStatus::Positive, t, e)
        };
        let censored: Vec<_> = (0..5).map(|_| rec(10.0, false)).collect();
        assert_eq!(median_followup(&censored), Ok(10.0));
        let events: Vec<_> = (1..=5).map(|i| rec(i as f64, true)).collect();
        assert_eq!(
            median_followup(&events),
            Err(SurvivalError::MedianUndefined { upper_bound: 5.0 })
        );
    }

    #[test]
    fn median_followup_uniform_censoring() {
        use crate::ingest::{Arm, MrdStatus};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ipd: Vec<_> = (0..2000)
            .map(|_| {
                let t = rng.random_range(0.0..20.0);
                SubjectRecord::new("T", Arm::Control, MrdStatus::Positive, t, false)
            })
            .collect();
        assert!((median_followup(&ipd).unwrap() - 10.0).abs() < 0.5);
    }

    proptest! {
        #[test]
        fn order_invariant_and_nonincreasing(
            mut pairs in prop::collection::vec((0.0f64..50.0, any::<bool>()), 1..60),
            seed in any::<u64>(),
        ) {
            let a = km(&pairs);
            prop_assert!(a.survival.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(a.survival.iter().all(|s| (0.0..=1.0).contains(s)));
            // Deterministic shuffle.
            let n = pairs.len();
            let mut state = seed | 1;
            for i in (1..n).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                pairs.swap(i, (state % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(km(&pairs), a);
        }
    }
}
