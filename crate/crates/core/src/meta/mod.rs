//! Trial-level meta-regression of treatment effects.

mod bootstrap;
mod ste;
mod wls;

pub use bootstrap::{bootstrap_r2_ci, quantile, BootstrapCi};
pub use ste::{ste, SteOutcome, SteResult, SMALL_N};
pub use wls::{wls_fit, wls_with_ci, WlsFit, WlsResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-trial treatment effects: log OR of surrogate negativity and log HR of
/// the true endpoint, experimental versus control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEffects {
    pub trial_id: String,
    pub log_or: f64,
    pub log_or_se: f64,
    pub log_hr: f64,
    pub log_hr_se: f64,
    pub n: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `1 / se(log OR)^2`.
    #[default]
    InverseVariance,
    SampleSize,
}

impl Weighting {
    pub fn weight(self, e: &TrialEffects) -> f64 {
        match self {
            Weighting::InverseVariance => e.log_or_se.powi(-2),
            Weighting::SampleSize => e.n as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::InverseVariance => "inverse_variance",
            Weighting::SampleSize => "sample_size",
        }
    }

    pub fn caption(self) -> &'static str {
        match self {
            Weighting::InverseVariance => "Weighted by inverse variance of log OR",
            Weighting::SampleSize => "Weighted by sample size",
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum MetaError {
    #[error("{0} trial(s); at least 3 required")]
    TooFewTrials(usize),
    #[error("trial {0} has a zero or non-finite weight")]
    ZeroWeight(String),
    #[error("log OR does not vary across trials")]
    ConstantPredictor,
    #[error("no bootstrap replicate had enough variation")]
    InsufficientVariation,
}

fn weights(effects: &[TrialEffects], weighting: Weighting) -> Result<Vec<f64>, MetaError> {
    if effects.len() < 3 {
        return Err(MetaError::TooFewTrials(effects.len()));
    }
    effects
        .iter()
        .map(|e| {
            let w = weighting.weight(e);
            if w.is_finite() && w > 0.0 {
                Ok(w)
            } else {
                Err(MetaError::ZeroWeight(e.trial_id.clone()))
            }
        })
        .collect()
}
