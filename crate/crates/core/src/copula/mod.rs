//! Two-stage Plackett copula surrogacy model.

mod likelihood;
mod plackett;
mod stage1;
mod stage2;

pub use likelihood::{
    group_by_trial, joint_loglik, joint_loglik_gradient, subject_loglik, trial_jets, CopulaParams,
    LikelihoodError, Observation, TrialData, TrialParams, TRIAL_PARAMS,
};
pub use plackett::{cdf, conditional_inverse, h_v, plackett_cdf, PlackettTheta};
pub use stage1::{fit_stage1, global_or, CopulaFit, ExcludedTrial, Stage1Options, TrialFit};
pub use stage2::{fit_stage2, square_correlation_ci, SquaredCI, Stage2Fit};

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum CopulaError {
    #[error("no trial has all four arm-by-status strata with events in both arms")]
    NoUsableTrials,
    #[error("copula fit did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("observed information is singular at the copula optimum")]
    SingularInformation,
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("{0} trial(s); at least 3 required for the trial-level model")]
    TooFewTrials(usize),
    #[error("{0}")]
    DegenerateEffects(&'static str),
}
