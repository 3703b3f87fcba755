use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::likelihood::{
    group_by_trial, joint_loglik, trial_jets, CopulaParams, TrialData, TrialParams, TRIAL_PARAMS,
};
use super::plackett::PlackettTheta;
use super::CopulaError;
use crate::ingest::{Arm, MrdStatus};
use crate::meta::TrialEffects;
use crate::optim::{maximize, NewtonOptions};
use crate::reconstruct::SubjectRecord;
use crate::survival::{logistic_closed_form, or_table_from_ipd, weibull_fit};

/// Gradient norm accepted when the line search can make no further progress.
const STALL_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct Stage1Options {
    /// Hold `theta` at this value instead of estimating it.
    pub fixed_theta: Option<f64>,
    pub newton: NewtonOptions,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Stage1Options {
            fixed_theta: None,
            newton: NewtonOptions {
                max_iter: 200,
                gradient_tol: 1e-6,
                max_step: 3.0,
            },
        }
    }
}

/// Stage-1 estimates for one trial with standard errors in the same layout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialFit {
    pub trial_id: String,
    pub n: u64,
    pub params: TrialParams,
    pub se: TrialParams,
}

impl TrialFit {
    pub fn shape(&self) -> f64 {
        self.params.log_shape.exp()
    }

    pub fn scale(&self) -> f64 {
        self.params.log_scale.exp()
    }

    /// Treatment effects on the surrogate (log OR) and on the hazard (log HR).
    pub fn effects(&self) -> TrialEffects {
        TrialEffects {
            trial_id: self.trial_id.clone(),
            log_or: self.params.b,
            log_or_se: self.se.b,
            log_hr: self.params.gamma,
            log_hr_se: self.se.gamma,
            n: self.n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcludedTrial {
    pub trial_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CopulaFit {
    pub trials: Vec<TrialFit>,
    pub theta: PlackettTheta,
    pub loglik: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub excluded: Vec<ExcludedTrial>,
}

impl CopulaFit {
    pub fn trial_effects(&self) -> Vec<TrialEffects> {
        self.trials.iter().map(TrialFit::effects).collect()
    }
}

/// The pooled global odds ratio with its Wald interval on the log scale.
pub fn global_or(fit: &CopulaFit) -> PlackettTheta {
    fit.theta
}

fn to_records(trial: &TrialData) -> Vec<SubjectRecord> {
    trial
        .subjects
        .iter()
        .map(|o| {
            let arm = if o.z == 1.0 { Arm::Experimental } else { Arm::Control };
            let status = if o.negative { MrdStatus::Negative } else { MrdStatus::Positive };
            SubjectRecord::new(&trial.trial_id, arm, status, o.time, o.event)
        })
        .collect()
}

/// Starting values from separate logistic and Weibull fits, or the reason
/// the trial cannot be fitted.
fn initial_params(trial: &TrialData) -> Result<TrialParams, String> {
    let ipd = to_records(trial);
    let table = or_table_from_ipd(&ipd);
    let cells = [
        (table.experimental.negative, "experimental/negative"),
        (table.experimental.positive, "experimental/positive"),
        (table.control.negative, "control/negative"),
        (table.control.positive, "control/positive"),
    ];
    if let Some((_, name)) = cells.iter().find(|(n, _)| *n == 0) {
        return Err(format!("no {name} subjects"));
    }
    for arm in [Arm::Experimental, Arm::Control] {
        if !ipd.iter().any(|s| s.arm == arm && s.event) {
            return Err(format!("no events in the {} arm", arm.as_str()));
        }
    }
    let weibull = weibull_fit(&ipd).map_err(|e| e.to_string())?;
    let (a, b) = logistic_closed_form(&table);
    Ok(TrialParams {
        a,
        b,
        log_shape: weibull.shape.ln(),
        log_scale: weibull.scale.ln(),
        gamma: weibull.gamma,
    })
}

/// Maximizes the joint likelihood over all trial parameters and the shared
/// `ln theta`. Trials that cannot be fitted are excluded with a warning.
pub fn fit_stage1(ipd: &[SubjectRecord], opts: &Stage1Options) -> Result<CopulaFit, CopulaError> {
    let mut data = Vec::new();
    let mut starts = Vec::new();
    let mut excluded = Vec::new();
    for trial in group_by_trial(ipd) {
        match initial_params(&trial) {
            Ok(p) => {
                starts.push(p);
                data.push(trial);
            }
            Err(reason) => {
                warn!("trial {} excluded from the copula fit: {reason}", trial.trial_id);
                excluded.push(ExcludedTrial {
                    trial_id: trial.trial_id,
                    reason,
                });
            }
        }
    }
    if data.is_empty() {
        return Err(CopulaError::NoUsableTrials);
    }

    let start = CopulaParams {
        trials: starts,
        log_theta: opts.fixed_theta.map_or(0.0, f64::ln),
    };
    let n = data.len();
    let dim = n * TRIAL_PARAMS + 1;
    let fixed = opts.fixed_theta.is_some();

    let full = |x: &DVector<f64>| {
        let jets = trial_jets(&CopulaParams::from_vector(x), &data).ok()?;
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        let last = dim - 1;
        let mut value = 0.0;
        for (i, j) in jets.iter().enumerate() {
            value += j.v;
            let o = i * TRIAL_PARAMS;
            for k in 0..TRIAL_PARAMS {
                g[o + k] = j.g[k];
                for l in 0..TRIAL_PARAMS {
                    h[(o + k, o + l)] = j.h[k][l];
                }
                h[(o + k, last)] = j.h[k][5];
                h[(last, o + k)] = j.h[5][k];
            }
            g[last] += j.g[5];
            h[(last, last)] += j.h[5][5];
        }
        if fixed {
            g[last] = 0.0;
            for k in 0..dim {
                h[(k, last)] = 0.0;
                h[(last, k)] = 0.0;
            }
            h[(last, last)] = -1.0;
        }
        Some((value, g, h))
    };
    let value = |x: &DVector<f64>| {
        joint_loglik(&CopulaParams::from_vector(x), &data).unwrap_or(f64::NEG_INFINITY)
    };

    let result = match maximize(start.to_vector(), full, value, opts.newton) {
        Ok(r) => r,
        Err(f) => match f.last {
            Some(r) if r.gradient_norm() < STALL_TOLERANCE && f.iterations < opts.newton.max_iter => {
                info!(
                    "copula fit stalled at gradient norm {:.2e}; accepted as converged",
                    r.gradient_norm()
                );
                r
            }
            _ => {
                return Err(CopulaError::NonConvergence {
                    iterations: f.iterations,
                    gradient_norm: f.gradient_norm,
                })
            }
        },
    };
    let cov = result.covariance().ok_or(CopulaError::SingularInformation)?;
    let se = |k: usize| cov[(k, k)].max(0.0).sqrt();
    let params = CopulaParams::from_vector(&result.x);
    let trials = data
        .iter()
        .zip(&params.trials)
        .enumerate()
        .map(|(i, (trial, p))| {
            let o = i * TRIAL_PARAMS;
            TrialFit {
                trial_id: trial.trial_id.clone(),
                n: trial.n_subjects() as u64,
                params: *p,
                se: TrialParams {
                    a: se(o),
                    b: se(o + 1),
                    log_shape: se(o + 2),
                    log_scale: se(o + 3),
                    gamma: se(o + 4),
                },
            }
        })
        .collect();
    Ok(CopulaFit {
        trials,
        theta: PlackettTheta {
            theta: params.log_theta.exp(),
            log_theta_se: if fixed { 0.0 } else { se(dim - 1) },
        },
        loglik: result.value,
        iterations: result.iterations,
        gradient_norm: result.gradient_norm(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{logodds_mrd, weibull_fit};

    fn small_trial(id: &str) -> Vec<SubjectRecord> {
        // Deterministic, hand-built mix of strata with varied times.
        let mut out = Vec::new();
        for i in 0..60 {
            let arm = if i % 2 == 0 { Arm::Experimental } else { Arm::Control };
            let negative = (i * 7) % 5 < if arm == Arm::Experimental { 3 } else { 2 };
            let status = if negative { MrdStatus::Negative } else { MrdStatus::Positive };
            let base = 3.0 + ((i * 37) % 29) as f64;
            let t = if negative { base * 1.4 } else { base };
            let event = (i * 11) % 4 != 0;
            out.push(SubjectRecord::new(id, arm, status, t, event));
        }
        out
    }

    #[test]
    fn fixed_independence_reduces_to_separate_fits() {
        let ipd = small_trial("A");
        let fit = fit_stage1(
            &ipd,
            &Stage1Options {
                fixed_theta: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let t = &fit.trials[0];
        let w = weibull_fit(&ipd).unwrap();
        let lo = logodds_mrd(&or_table_from_ipd(&ipd)).unwrap();
        assert!((t.params.b - lo.effect.estimate).abs() < 1e-6);
        assert!((t.se.b - lo.effect.std_error).abs() < 1e-6);
        assert!((t.shape() - w.shape).abs() < 1e-6);
        assert!((t.scale() - w.scale).abs() < 1e-6);
        assert!((t.params.gamma - w.gamma).abs() < 1e-6);
        assert!((t.se.gamma - w.gamma_se()).abs() < 1e-6);
    }

    #[test]
    fn free_theta_converges_and_excludes_degenerate_trials() {
        let mut ipd = small_trial("A");
        ipd.extend(small_trial("B").into_iter().map(|mut s| {
            s.time *= 1.3;
            s
        }));
        // Trial C lacks experimental surrogate-positive subjects.
        ipd.extend(
            small_trial("C")
                .into_iter()
                .filter(|s| !(s.arm == Arm::Experimental && s.status == MrdStatus::Positive)),
        );
        let fit = fit_stage1(&ipd, &Stage1Options::default()).unwrap();
        assert_eq!(fit.trials.len(), 2);
        assert_eq!(fit.excluded.len(), 1);
        assert_eq!(fit.excluded[0].trial_id, "C");
        assert!(fit.gradient_norm < 1e-6);
        // Negatives were given longer times, so theta exceeds one.
        assert!(fit.theta.theta > 1.0);
        assert!(fit.theta.log_theta_se > 0.0);
    }

    #[test]
    fn label_swap_inverts_theta() {
        let ipd = small_trial("A");
        let swapped: Vec<_> = ipd
            .iter()
            .map(|s| SubjectRecord { status: s.status.flipped(), ..s.clone() })
            .collect();
        let a = fit_stage1(&ipd, &Stage1Options::default()).unwrap();
        let b = fit_stage1(&swapped, &Stage1Options::default()).unwrap();
        assert!((a.theta.theta * b.theta.theta - 1.0).abs() < 1e-6);
        assert!((a.trials[0].params.b + b.trials[0].params.b).abs() < 1e-6);
    }

    #[test]
    fn no_usable_trials() {
        let ipd: Vec<_> = small_trial("A")
            .into_iter()
            .filter(|s| s.status == MrdStatus::Negative)
            .collect();
        assert_eq!(
            fit_stage1(&ipd, &Stage1Options::default()),
            Err(CopulaError::NoUsableTrials)
        );
    }
}
