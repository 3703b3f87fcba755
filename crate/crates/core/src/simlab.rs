//! Simulated multi-trial datasets with known individual-level and
//! trial-level association.
//!
//! ```toml
//! n_trials = 10
//! subjects_per_trial = 400
//! theta_true = 5.0
//! trial_level_r2_true = 0.9
//! weibull_shape = 1.2
//! weibull_scale = 24.0
//! logistic_baseline = 0.0
//! admin_censoring = 36.0
//! seed = 1
//! surrogate_effect = { mean = 0.8, sd = 0.6 }
//! true_effect = { mean = -0.4, sd = 0.3 }
//! ```

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::copula::conditional_inverse;
use crate::ingest::{Arm, MrdStatus};
use crate::jet::expit;
use crate::reconstruct::SubjectRecord;
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectDistribution {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub n_trials: usize,
    pub subjects_per_trial: usize,
    pub theta_true: f64,
    pub trial_level_r2_true: f64,
    pub weibull_shape: f64,
    /// Control-arm Weibull scale, months.
    pub weibull_scale: f64,
    /// Control-arm log odds of surrogate negativity.
    pub logistic_baseline: f64,
    /// Treatment log odds ratio of surrogate negativity, across trials.
    pub surrogate_effect: EffectDistribution,
    /// Treatment log hazard ratio, across trials.
    pub true_effect: EffectDistribution,
    /// Follow-up is cut at this time, months.
    pub admin_censoring: f64,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Parse(#[from] toml::de::Error),
}

impl SimScenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: SimScenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1");
        }
        if self.subjects_per_trial < 2 {
            return bad("subjects_per_trial must be at least 2");
        }
        if !positive(self.theta_true) {
            return bad("theta_true must be positive");
        }
        if !(0.0..=1.0).contains(&self.trial_level_r2_true) {
            return bad("trial_level_r2_true must lie in [0, 1]");
        }
        if !positive(self.weibull_shape) || !positive(self.weibull_scale) {
            return bad("Weibull shape and scale must be positive");
        }
        if !(self.admin_censoring.is_finite() && self.admin_censoring >= 0.0) {
            return bad("admin_censoring must be nonnegative");
        }
        for e in [self.surrogate_effect, self.true_effect] {
            if !(e.mean.is_finite() && e.sd.is_finite() && e.sd >= 0.0) {
                return bad("effect distributions need a finite mean and nonnegative sd");
            }
        }
        if !self.logistic_baseline.is_finite() {
            return bad("logistic_baseline must be finite");
        }
        Ok(())
    }

    pub fn trial_id(&self, index: usize) -> String {
        format!("SIM{:03}", index + 1)
    }
}

/// The effects a trial was generated with.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrueTrialEffect {
    pub trial_id: String,
    pub log_or: f64,
    pub log_hr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    /// Subjects grouped by trial, control arm first within each trial.
    pub records: Vec<SubjectRecord>,
    pub truth: Vec<TrueTrialEffect>,
}

/// Draws `(U, W)` from the Plackett copula with parameter `theta` by
/// conditional inversion: `W` uniform, then `U` from `∂C/∂w`.
pub fn sample_pair<R: Rng + ?Sized>(rng: &mut R, theta: f64) -> (f64, f64) {
    let w: f64 = rng.random();
    let q: f64 = rng.random();
    (conditional_inverse(q, w, theta), w)
}

/// Generates every trial from its own random stream.
pub fn simulate(s: &SimScenario) -> Result<Simulation, SimError> {
    s.validate()?;
    let rho = s.trial_level_r2_true.sqrt();
    let per_trial: Vec<(TrueTrialEffect, Vec<SubjectRecord>)> = (0..s.n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(s.seed, i as u64);
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let log_or = s.surrogate_effect.mean + s.surrogate_effect.sd * z1;
            // Benefit on the surrogate (log OR up) goes with benefit on the
            // endpoint (log HR down).
            let log_hr =
                s.true_effect.mean + s.true_effect.sd * (-rho * z1 + (1.0 - rho * rho).sqrt() * z2);
            let id = s.trial_id(i);
            let n_control = s.subjects_per_trial / 2;
            let records = (0..s.subjects_per_trial)
                .map(|k| {
                    let arm = if k < n_control { Arm::Control } else { Arm::Experimental };
                    let z = arm.indicator();
                    let p_pos = expit(-(s.logistic_baseline + log_or * z));
                    // (U, W) with U <= p_pos meaning surrogate-positive and
                    // W = S(T); their copula has parameter 1 / theta.
                    let (u, w) = sample_pair(&mut rng, 1.0 / s.theta_true);
                    let status = if u <= p_pos { MrdStatus::Positive } else { MrdStatus::Negative };
                    let cum = -w.max(f64::MIN_POSITIVE).ln() * (-log_hr * z).exp();
                    let t = s.weibull_scale * cum.powf(1.0 / s.weibull_shape);
                    let (time, event) = if t > s.admin_censoring {
                        (s.admin_censoring, false)
                    } else {
                        (t, true)
                    };
                    SubjectRecord::new(&id, arm, status, time, event)
                })
                .collect();
            (
                TrueTrialEffect {
                    trial_id: id,
                    log_or,
                    log_hr,
                },
                records,
            )
        })
        .collect();
    let mut out = Simulation {
        records: Vec::with_capacity(s.n_trials * s.subjects_per_trial),
        truth: Vec::with_capacity(s.n_trials),
    };
    for (truth, records) in per_trial {
        out.truth.push(truth);
        out.records.extend(records);
    }
    Ok(out)
}
