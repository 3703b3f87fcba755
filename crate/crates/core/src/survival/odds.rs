use serde::Serialize;

use super::{EffectEstimate, SurvivalError};
use crate::ingest::{Arm, MrdStatus, OrTable};
use crate::reconstruct::SubjectRecord;

/// Log odds ratio of surrogate negativity, experimental versus control.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogOdds {
    pub effect: EffectEstimate,
    /// 0.5 was added to every cell because one was empty.
    pub continuity_corrected: bool,
}

/// Woolf estimate from a 2×2 table, with the Haldane-Anscombe correction
/// when any cell is zero.
pub fn logodds_mrd(table: &OrTable) -> Result<LogOdds, SurvivalError> {
    let (e, c) = (table.experimental, table.control);
    if e.negative + e.positive == 0 {
        return Err(SurvivalError::EmptyArm(Arm::Experimental));
    }
    if c.negative + c.positive == 0 {
        return Err(SurvivalError::EmptyArm(Arm::Control));
    }
    let cells = [e.negative, e.positive, c.negative, c.positive];
    let corrected = cells.contains(&0);
    let [a, b, c, d] = cells.map(|x| x as f64 + if corrected { 0.5 } else { 0.0 });
    Ok(LogOdds {
        effect: EffectEstimate {
            estimate: (a * d / (b * c)).ln(),
            std_error: (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt(),
            n: table.total(),
        },
        continuity_corrected: corrected,
    })
}

/// Counts subjects by arm and surrogate status.
pub fn or_table_from_ipd(ipd: &[SubjectRecord]) -> OrTable {
    let count = |arm, status| {
        ipd.iter()
            .filter(|s| s.arm == arm && s.status == status)
            .count() as u64
    };
    OrTable::new(
        count(Arm::Experimental, MrdStatus::Negative),
        count(Arm::Experimental, MrdStatus::Positive),
        count(Arm::Control, MrdStatus::Negative),
        count(Arm::Control, MrdStatus::Positive),
    )
}

/// Maximum-likelihood `(intercept, slope)` of the logistic model
/// `P(negative) = expit(intercept + slope * z)`; exact for a binary
/// covariate when no cell is empty.
pub fn logistic_closed_form(table: &OrTable) -> (f64, f64) {
    let (e, c) = (table.experimental, table.control);
    let adj = |x: u64| x as f64 + 0.5 * f64::from(u8::from(x == 0));
    let intercept = (adj(c.negative) / adj(c.positive)).ln();
    let slope = (adj(e.negative) / adj(e.positive)).ln() - intercept;
    (intercept, slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn woolf_hand_values() {
        let r = logodds_mrd(&OrTable::new(15, 5, 10, 10)).unwrap();
        assert!((r.effect.estimate - 3f64.ln()).abs() < 1e-12);
        assert!((r.effect.std_error - 0.6831).abs() < 1e-4);
        assert!(!r.continuity_corrected);
        assert_eq!(r.effect.n, 40);
        assert_eq!(logodds_mrd(&OrTable::new(10, 10, 10, 10)).unwrap().effect.estimate, 0.0);
    }

    #[test]
    fn zero_cell_is_corrected() {
        let r = logodds_mrd(&OrTable::new(10, 0, 10, 10)).unwrap();
        assert!(r.continuity_corrected);
        assert!((r.effect.estimate - (10.5f64 * 10.5 / (0.5 * 10.5)).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_arm_fails() {
        assert_eq!(
            logodds_mrd(&OrTable::new(0, 0, 3, 4)),
            Err(SurvivalError::EmptyArm(Arm::Experimental))
        );
    }

    #[test]
    fn antisymmetric_in_arms() {
        let a = logodds_mrd(&OrTable::new(7, 3, 4, 9)).unwrap().effect;
        let b = logodds_mrd(&OrTable::new(4, 9, 7, 3)).unwrap().effect;
        assert!((a.estimate + b.estimate).abs() < 1e-12);
        assert!((a.std_error - b.std_error).abs() < 1e-15);
    }

    #[test]
    fn closed_form_slope_is_log_or() {
        let t = OrTable::new(15, 5, 10, 10);
        let (a, b) = logistic_closed_form(&t);
        assert!(a.abs() < 1e-15);
        assert!((b - 3f64.ln()).abs() < 1e-12);
    }
}
