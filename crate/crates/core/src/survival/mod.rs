//! Estimators on individual patient data.

mod cox;
mod km;
mod odds;
mod weibull;

pub use cox::{cox_loghr, cox_partial_loglik};
pub use km::{km_estimate, km_from_pairs, median_followup, KmCurve};
pub use odds::{logistic_closed_form, logodds_mrd, or_table_from_ipd, LogOdds};
pub use weibull::{weibull_fit, weibull_loglik, WeibullFit};
pub(crate) use weibull::weibull_log_terms;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Arm;

/// A treatment effect on the log scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: u64,
}

impl EffectEstimate {
    /// Wald interval on the log scale.
    pub fn ci95(&self) -> (f64, f64) {
        let half = 1.959_963_984_540_054 * self.std_error;
        (self.estimate - half, self.estimate + half)
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SurvivalError {
    #[error("no subjects")]
    EmptyInput,
    #[error("no events")]
    NoEvents,
    #[error("only one arm present")]
    SingleArm,
    #[error("{0} arm is empty")]
    EmptyArm(Arm),
    #[error("partial likelihood is monotone (estimate diverges past {beta:.1}); the arms are separated")]
    Separation { beta: f64 },
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("fewer than 2 distinct event times: Weibull shape is unbounded")]
    ShapeUnbounded,
    #[error("reverse Kaplan-Meier never reaches 0.5 (median follow-up exceeds {upper_bound})")]
    MedianUndefined { upper_bound: f64 },
}
