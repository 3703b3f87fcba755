use super::{EffectEstimate, SurvivalError};
use crate::ingest::Arm;
use crate::reconstruct::SubjectRecord;

const MAX_ITER: usize = 50;
const SCORE_TOL: f64 = 1e-8;
/// Beyond this the likelihood is treated as monotone.
const DIVERGENCE: f64 = 25.0;

/// Per distinct event time: events in each arm and the risk set sizes.
struct RiskTable {
    rows: Vec<EventTime>,
}

struct EventTime {
    events_exp: f64,
    events_total: f64,
    at_risk_ctrl: f64,
    at_risk_exp: f64,
}

impl RiskTable {
    fn new(ipd: &[SubjectRecord]) -> Self {
        let mut sorted: Vec<(f64, bool, bool)> = ipd
            .iter()
            .map(|s| (s.time, s.event, s.arm == Arm::Experimental))
            .collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut at_risk_exp = sorted.iter().filter(|s| s.2).count() as f64;
        let mut at_risk_ctrl = sorted.len() as f64 - at_risk_exp;
        let mut rows = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let t = sorted[i].0;
            let (mut d_exp, mut d, mut leave_exp, mut leave_ctrl) = (0.0, 0.0, 0.0, 0.0);
            while i < sorted.len() && sorted[i].0 == t {
                let (_, event, exp) = sorted[i];
                if event {
                    d += 1.0;
                    if exp {
                        d_exp += 1.0;
                    }
                }
                if exp {
                    leave_exp += 1.0;
                } else {
                    leave_ctrl += 1.0;
                }
                i += 1;
            }
            if d > 0.0 {
                rows.push(EventTime {
                    events_exp: d_exp,
                    events_total: d,
                    at_risk_ctrl,
                    at_risk_exp,
                });
            }
            at_risk_exp -= leave_exp;
            at_risk_ctrl -= leave_ctrl;
        }
        RiskTable { rows }
    }

    /// Log partial likelihood, score and information at `beta`.
    fn evaluate(&self, beta: f64) -> (f64, f64, f64) {
        let eb = beta.exp();
        let (mut ll, mut score, mut info) = (0.0, 0.0, 0.0);
        for r in &self.rows {
            let s0 = r.at_risk_ctrl + r.at_risk_exp * eb;
            let p = r.at_risk_exp * eb / s0;
            ll += r.events_exp * beta - r.events_total * s0.ln();
            score += r.events_exp - r.events_total * p;
            info += r.events_total * p * (1.0 - p);
        }
        (ll, score, info)
    }
}

/// Breslow log partial likelihood for the experimental-arm indicator.
pub fn cox_partial_loglik(ipd: &[SubjectRecord], beta: f64) -> f64 {
    RiskTable::new(ipd).evaluate(beta).0
}

/// Log hazard ratio of experimental versus control by Newton-Raphson on the
/// Breslow partial likelihood, with step halving.
pub fn cox_loghr(ipd: &[SubjectRecord]) -> Result<EffectEstimate, SurvivalError> {
    if ipd.is_empty() {
        return Err(SurvivalError::EmptyInput);
    }
    let n_exp = ipd.iter().filter(|s| s.arm == Arm::Experimental).count();
    if n_exp == 0 || n_exp == ipd.len() {
        return Err(SurvivalError::SingleArm);
    }
    let table = RiskTable::new(ipd);
    if table.rows.is_empty() {
        return Err(SurvivalError::NoEvents);
    }
    let events_exp: f64 = table.rows.iter().map(|r| r.events_exp).sum();
    let events: f64 = table.rows.iter().map(|r| r.events_total).sum();
    if events_exp == 0.0 {
        return Err(SurvivalError::Separation {
            beta: f64::NEG_INFINITY,
        });
    }
    if events_exp == events {
        return Err(SurvivalError::Separation {
            beta: f64::INFINITY,
        });
    }

    let mut beta = 0.0;
    let (mut ll, mut score, mut info) = table.evaluate(beta);
    for _ in 0..MAX_ITER {
        if score.abs() < SCORE_TOL {
            break;
        }
        if info <= 0.0 || !info.is_finite() {
            return Err(SurvivalError::Separation { beta });
        }
        let step = (score / info).clamp(-5.0, 5.0);
        let mut t = 1.0;
        let mut next = table.evaluate(beta + step);
        let mut halvings = 0;
        while next.0 < ll && halvings < 30 {
            t *= 0.5;
            next = table.evaluate(beta + t * step);
            halvings += 1;
        }
        beta += t * step;
        (ll, score, info) = next;
        if beta.abs() > DIVERGENCE {
            return Err(SurvivalError::Separation { beta });
        }
    }
    if score.abs() >= SCORE_TOL * 1e3 || info <= 0.0 {
        return Err(SurvivalError::NonConvergence {
            iterations: MAX_ITER,
            gradient_norm: score.abs(),
        });
    }
    Ok(EffectEstimate {
        estimate: beta,
        std_error: info.sqrt().recip(),
        n: ipd.len() as u64,
    })
}
