//! Joint likelihood of a binary surrogate and a censored event time.
//!
//! Per trial, `P(negative | z) = expit(a + b z)` and
//! `S(t | z) = exp(-(t / scale)^shape e^{gamma z})`. The surrogate and the
//! survival time are coupled by a Plackett copula whose odds ratio `theta`
//! compares the odds of an event by any time `t` in surrogate-positive
//! versus surrogate-negative patients; `theta > 1` means negatives do better.
//! With `p` the probability of the subject's own status and `S = S(t | z)`,
//!
//! ```text
//! censored:  P(status, T > t)        = C(p, S; theta_s)
//! event:    -d/dt P(status, T > t)   = f(t | z) * dC/dv(p, S; theta_s)
//! ```
//!
//! where `theta_s = theta` for negatives and `1 / theta` for positives.

use std::collections::HashMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::plackett::{cdf, h_v};
use crate::ingest::MrdStatus;
use crate::jet::{expit, Jet, Real};
use crate::reconstruct::SubjectRecord;
use crate::survival::weibull_log_terms;

/// Parameters per trial, in this order.
pub const TRIAL_PARAMS: usize = 5;
const MIN_EVENT_TIME: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub z: f64,
    pub negative: bool,
    pub time: f64,
    pub event: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialData {
    pub trial_id: String,
    pub subjects: Vec<Observation>,
}

impl TrialData {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }
}

/// Groups records by trial, keeping trials in order of first appearance.
pub fn group_by_trial(ipd: &[SubjectRecord]) -> Vec<TrialData> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<TrialData> = Vec::new();
    for s in ipd {
        let i = *index.entry(s.trial_id.as_str()).or_insert_with(|| {
            out.push(TrialData {
                trial_id: s.trial_id.clone(),
                subjects: Vec::new(),
            });
            out.len() - 1
        });
        out[i].subjects.push(Observation {
            z: s.arm.indicator(),
            negative: s.status == MrdStatus::Negative,
            time: s.time,
            event: s.event,
        });
    }
    out
}

/// Per-trial parameters on the optimization scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    /// Control-arm log odds of surrogate negativity.
    pub a: f64,
    /// Treatment log odds ratio of surrogate negativity.
    pub b: f64,
    pub log_shape: f64,
    pub log_scale: f64,
    /// Treatment log hazard ratio.
    pub gamma: f64,
}

impl TrialParams {
    fn to_array(self) -> [f64; TRIAL_PARAMS] {
        [self.a, self.b, self.log_shape, self.log_scale, self.gamma]
    }

    fn from_slice(x: &[f64]) -> Self {
        TrialParams {
            a: x[0],
            b: x[1],
            log_shape: x[2],
            log_scale: x[3],
            gamma: x[4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopulaParams {
    pub trials: Vec<TrialParams>,
    pub log_theta: f64,
}

impl CopulaParams {
    /// Flattened as `[trial 0 (5 values), trial 1, ..., ln theta]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.trials.iter().flat_map(|t| t.to_array()).collect();
        v.push(self.log_theta);
        DVector::from_vec(v)
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = (x.len() - 1) / TRIAL_PARAMS;
        CopulaParams {
            trials: (0..n)
                .map(|i| TrialParams::from_slice(&x.as_slice()[i * TRIAL_PARAMS..(i + 1) * TRIAL_PARAMS]))
                .collect(),
            log_theta: x[x.len() - 1],
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum LikelihoodError {
    #[error("subject {subject} of trial {trial_id} has a non-finite likelihood contribution")]
    NonFinite { trial_id: String, subject: usize },
    #[error("{params} parameter sets for {trials} trials")]
    Shape { params: usize, trials: usize },
}

/// Log-likelihood contribution of one subject. `p` holds the trial's
/// parameters followed by `ln theta`.
pub fn subject_loglik<T: Real>(p: &[T; 6], obs: &Observation) -> T {
    let lin = p[0] + p[1] * obs.z;
    let (prob, log_theta) = if obs.negative {
        (expit(lin), p[5])
    } else {
        (expit(-lin), -p[5])
    };
    let t = if obs.event { obs.time.max(MIN_EVENT_TIME) } else { obs.time };
    let (log_s, log_f) = weibull_log_terms(p[2], p[3], p[4], t, obs.z);
    let s = log_s.exp();
    if obs.event {
        log_f + h_v(prob, s, log_theta).ln()
    } else {
        cdf(prob, s, log_theta).ln()
    }
}

fn trial_loglik<T: Real>(p: &[T; 6], trial: &TrialData) -> Result<T, LikelihoodError> {
    let mut ll = T::constant(0.0);
    for (i, obs) in trial.subjects.iter().enumerate() {
        let c = subject_loglik(p, obs);
        if !c.value().is_finite() {
            return Err(LikelihoodError::NonFinite {
                trial_id: trial.trial_id.clone(),
                subject: i,
            });
        }
        ll = ll + c;
    }
    Ok(ll)
}

fn check_shape(params: &CopulaParams, data: &[TrialData]) -> Result<(), LikelihoodError> {
    if params.trials.len() != data.len() {
        return Err(LikelihoodError::Shape {
            params: params.trials.len(),
            trials: data.len(),
        });
    }
    Ok(())
}

fn plain(params: &CopulaParams, i: usize) -> [f64; 6] {
    let t = params.trials[i].to_array();
    [t[0], t[1], t[2], t[3], t[4], params.log_theta]
}

/// Joint log-likelihood over all trials.
pub fn joint_loglik(params: &CopulaParams, data: &[TrialData]) -> Result<f64, LikelihoodError> {
    check_shape(params, data)?;
    let parts: Result<Vec<f64>, _> = data
        .par_iter()
        .enumerate()
        .map(|(i, trial)| trial_loglik(&plain(params, i), trial))
        .collect();
    Ok(parts?.into_iter().sum())
}

/// Per-trial value, gradient and Hessian with respect to the trial's
/// parameters and `ln theta` (index 5).
pub fn trial_jets(params: &CopulaParams, data: &[TrialData]) -> Result<Vec<Jet<6>>, LikelihoodError> {
    check_shape(params, data)?;
    data.par_iter()
        .enumerate()
        .map(|(i, trial)| {
            let x = plain(params, i);
            let p: [Jet<6>; 6] = std::array::from_fn(|k| Jet::var(x[k], k));
            trial_loglik(&p, trial)
        })
        .collect()
}

/// Exact gradient of [`joint_loglik`] in the flattened parameter order.
pub fn joint_loglik_gradient(
    params: &CopulaParams,
    data: &[TrialData],
) -> Result<DVector<f64>, LikelihoodError> {
    let jets = trial_jets(params, data)?;
    let n = jets.len();
    let mut g = DVector::zeros(n * TRIAL_PARAMS + 1);
    for (i, j) in jets.iter().enumerate() {
        for k in 0..TRIAL_PARAMS {
            g[i * TRIAL_PARAMS + k] = j.g[k];
        }
        g[n * TRIAL_PARAMS] += j.g[5];
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::expit;
    use crate::ingest::Arm;
    use crate::survival::weibull_loglik;

    fn arm_of(z: f64) -> Arm {
        if z == 1.0 {
            Arm::Experimental
        } else {
            Arm::Control
        }
    }

    fn obs(z: f64, negative: bool, time: f64, event: bool) -> Observation {
        Observation { z, negative, time, event }
    }

    fn tiny() -> TrialData {
        TrialData {
            trial_id: "T".into(),
            subjects: vec![
                obs(1.0, true, 4.0, false),
                obs(1.0, false, 2.0, true),
                obs(0.0, true, 6.0, true),
                obs(0.0, false, 3.0, false),
            ],
        }
    }

    fn params(log_theta: f64) -> CopulaParams {
        CopulaParams {
            trials: vec![TrialParams {
                a: -0.3,
                b: 0.8,
                log_shape: 0.2,
                log_scale: 2.0,
                gamma: -0.4,
            }],
            log_theta,
        }
    }

    #[test]
    fn hand_enumerated_tiny_dataset() {
        let theta: f64 = 3.0;
        let p = params(theta.ln());
        let tp = p.trials[0];
        let (shape, scale) = (tp.log_shape.exp(), tp.log_scale.exp());
        let surv = |t: f64, z: f64| (-(t / scale).powf(shape) * (tp.gamma * z).exp()).exp();
        let dens = |t: f64, z: f64| {
            let hz = shape / scale * (t / scale).powf(shape - 1.0) * (tp.gamma * z).exp();
            hz * surv(t, z)
        };
        // Textbook Plackett and its v-derivative.
        let c = |u: f64, v: f64, t: f64| {
            let s = 1.0 + (t - 1.0) * (u + v);
            (s - (s * s - 4.0 * t * (t - 1.0) * u * v).sqrt()) / (2.0 * (t - 1.0))
        };
        let dc = |u: f64, v: f64, t: f64| {
            let s = 1.0 + (t - 1.0) * (u + v);
            let r = (s * s - 4.0 * t * (t - 1.0) * u * v).sqrt();
            (1.0 - (s - 2.0 * t * u) / r) / 2.0
        };
        let pneg = |z: f64| expit(tp.a + tp.b * z);
        let expected = c(pneg(1.0), surv(4.0, 1.0), theta).ln()
            + (dens(2.0, 1.0) * dc(1.0 - pneg(1.0), surv(2.0, 1.0), 1.0 / theta)).ln()
            + (dens(6.0, 0.0) * dc(pneg(0.0), surv(6.0, 0.0), theta)).ln()
            + c(1.0 - pneg(0.0), surv(3.0, 0.0), 1.0 / theta).ln();
        let got = joint_loglik(&p, &[tiny()]).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn independence_factorizes() {
        let p = params(0.0);
        let data = tiny();
        let tp = p.trials[0];
        let logistic: f64 = data
            .subjects
            .iter()
            .map(|o| {
                let q = expit(tp.a + tp.b * o.z);
                if o.negative { q.ln() } else { (1.0 - q).ln() }
            })
            .sum();
        let ipd: Vec<SubjectRecord> = data
            .subjects
            .iter()
            .map(|o| SubjectRecord::new("T", arm_of(o.z), MrdStatus::Positive, o.time, o.event))
            .collect();
        let weib = weibull_loglik(&ipd, tp.log_shape.exp(), tp.log_scale.exp(), tp.gamma);
        let joint = joint_loglik(&p, &[data]).unwrap();
        assert!((joint - logistic - weib).abs() < 1e-10);
    }

    #[test]
    fn time_rescaling_only_adds_jacobian() {
        let data = tiny();
        let scaled = TrialData {
            trial_id: "T".into(),
            subjects: data
                .subjects
                .iter()
                .map(|o| Observation { time: o.time * 2.0, ..*o })
                .collect(),
        };
        let p = params(1.1);
        let mut q = p.clone();
        q.trials[0].log_scale += 2f64.ln();
        let events = data.subjects.iter().filter(|o| o.event).count() as f64;
        let a = joint_loglik(&p, &[data]).unwrap();
        let b = joint_loglik(&q, &[scaled]).unwrap();
        assert!((a - b - events * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = vec![tiny(), tiny()];
        let mut p = params(0.7);
        p.trials.push(TrialParams { a: 0.2, b: -0.5, log_shape: -0.1, log_scale: 1.5, gamma: 0.3 });
        let g = joint_loglik_gradient(&p, &data).unwrap();
        let x = p.to_vector();
        for k in 0..x.len() {
            let h = 1e-5;
            let mut up = x.clone();
            up[k] += h;
            let mut dn = x.clone();
            dn[k] -= h;
            let fd = (joint_loglik(&CopulaParams::from_vector(&up), &data).unwrap()
                - joint_loglik(&CopulaParams::from_vector(&dn), &data).unwrap())
                / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-6 * fd.abs().max(1.0), "component {k}");
        }
    }

    #[test]
    fn swapping_labels_inverts_theta() {
        let data = tiny();
        let swapped = TrialData {
            trial_id: "T".into(),
            subjects: data.subjects.iter().map(|o| Observation { negative: !o.negative, ..*o }).collect(),
        };
        let p = params(0.9);
        let mut q = p.clone();
        q.log_theta = -0.9;
        q.trials[0].a = -p.trials[0].a;
        q.trials[0].b = -p.trials[0].b;
        let a = joint_loglik(&p, &[data]).unwrap();
        let b = joint_loglik(&q, &[swapped]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn non_finite_contribution_names_subject() {
        let mut data = tiny();
        data.subjects[3].time = f64::NAN;
        let err = joint_loglik(&params(0.0), &[data]).unwrap_err();
        assert_eq!(err, LikelihoodError::NonFinite { trial_id: "T".into(), subject: 3 });
    }
}
