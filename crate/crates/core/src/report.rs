//! Surrogacy report, verdict and its text rendering.

use std::fmt::Write as _;

use serde::Serialize;

use crate::meta::{SteOutcome, SteResult, SMALL_N};

/// Point estimate with a 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Estimate {
    pub fn new(estimate: f64, lower: f64, upper: f64) -> Self {
        Estimate {
            estimate,
            lower,
            upper,
        }
    }

    pub fn excludes(&self, value: f64) -> bool {
        self.lower > value || self.upper < value
    }

    /// `0.247 [0.000, 0.995]`.
    pub fn render(&self) -> String {
        format!("{:.3} [{:.3}, {:.3}]", self.estimate, self.lower, self.upper)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialLevelVerdict {
    StrongTrialLevel,
    WeakTrialLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndividualVerdict {
    StrongIndividual,
    ModerateIndividual,
    NonsignificantIndividual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub trial_level: TrialLevelVerdict,
    pub individual: IndividualVerdict,
}

impl TrialLevelVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLevelVerdict::StrongTrialLevel => "strong_trial_level",
            TrialLevelVerdict::WeakTrialLevel => "weak_trial_level",
        }
    }
}

impl IndividualVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            IndividualVerdict::StrongIndividual => "strong_individual",
            IndividualVerdict::ModerateIndividual => "moderate_individual",
            IndividualVerdict::NonsignificantIndividual => "nonsignificant_individual",
        }
    }
}

pub const R2_TARGET: f64 = 0.8;
pub const R2_LOWER_TARGET: f64 = 0.6;
pub const R2_FLOOR: f64 = 0.7;
pub const STRONG_OR: f64 = 3.0;

/// Trial-level strength needs every R² (both weighted regressions and the
/// copula) at or above 0.8 with lower bounds above 0.6 and none below 0.7;
/// missing estimates count as weak. Individual-level strength needs a
/// global OR of at least 3 with an interval excluding 1.
pub fn verdict(r2: &[Option<Estimate>], global_or: Option<&Estimate>) -> Verdict {
    let strong_trial = !r2.is_empty()
        && r2.iter().all(|e| {
            e.is_some_and(|e| e.estimate >= R2_TARGET && e.lower > R2_LOWER_TARGET && e.estimate >= R2_FLOOR)
        });
    let individual = match global_or {
        Some(or) if or.excludes(1.0) && or.estimate >= STRONG_OR => IndividualVerdict::StrongIndividual,
        Some(or) if or.excludes(1.0) => IndividualVerdict::ModerateIndividual,
        _ => IndividualVerdict::NonsignificantIndividual,
    };
    Verdict {
        trial_level: if strong_trial {
            TrialLevelVerdict::StrongTrialLevel
        } else {
            TrialLevelVerdict::WeakTrialLevel
        },
        individual,
    }
}

/// One row of the per-trial effects table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectsRow {
    pub trial_id: String,
    pub n: u64,
    pub mrd_measure_time: Option<f64>,
    pub sensitivity_label: Option<String>,
    pub log_or: f64,
    pub log_or_se: f64,
    pub or_continuity_corrected: bool,
    pub log_hr: f64,
    pub log_hr_se: f64,
    /// Copula stage-1 effects, absent when the trial was left out of the fit.
    pub copula_log_or: Option<f64>,
    pub copula_log_or_se: Option<f64>,
    pub copula_log_hr: Option<f64>,
    pub copula_log_hr_se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct R2Summary {
    pub r2_wls_inverse_variance: Estimate,
    pub r2_wls_sample_size: Estimate,
    pub r2_copula: Estimate,
    pub copula_correlation: Estimate,
    pub bootstrap_shortfall: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialLevel {
    Available {
        #[serde(flatten)]
        r2: R2Summary,
        ste: Option<SteResult>,
    },
    Unavailable {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Conventions {
    pub treatment_benefit: String,
    pub surrogate_axis: String,
    pub global_or: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            treatment_benefit: "log HR < 0 (experimental vs control)".into(),
            surrogate_axis: "log OR of surrogate negativity > 0 favours experimental".into(),
            global_or: "odds of an event by time t, surrogate-positive vs surrogate-negative; > 1 means negatives do better".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurrogacyReport {
    pub indication: String,
    pub endpoint: String,
    pub conventions: Conventions,
    pub seed: u64,
    pub replicates: usize,
    pub n_trials: usize,
    pub pooled_sample_size: u64,
    pub median_followup: Option<f64>,
    pub trial_level: TrialLevel,
    pub global_or: Option<Estimate>,
    pub effects: Vec<EffectsRow>,
    pub excluded_trials: Vec<String>,
    pub warnings: Vec<String>,
    pub verdict: Verdict,
}

impl SurrogacyReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable summary table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let na = "n/a".to_string();
        let _ = writeln!(out, "Surrogacy assessment: {} ({})", self.indication, self.endpoint);
        let _ = writeln!(
            out,
            "Trials: {}   Pooled sample size: {}   Median follow-up: {}",
            self.n_trials,
            self.pooled_sample_size,
            self.median_followup.map_or(na.clone(), |m| format!("{m:.1} months"))
        );
        let _ = writeln!(out, "Benefit: {}; {}", self.conventions.treatment_benefit, self.conventions.surrogate_axis);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<44}Estimate [95% CI]", "Assessment");
        match &self.trial_level {
            TrialLevel::Available { r2, ste } => {
                let _ = writeln!(out, "{:<44}{}", "R2_WLS inverse variance", r2.r2_wls_inverse_variance.render());
                let _ = writeln!(out, "{:<44}{}", "R2_WLS sample size", r2.r2_wls_sample_size.render());
                let _ = writeln!(out, "{:<44}{}", "R2_Copula", r2.r2_copula.render());
                let ste_text = match ste {
                    Some(s) => {
                        let value = match s.outcome {
                            SteOutcome::Estimable { log_or } => {
                                format!("log OR {:.3} (OR {:.3})", log_or, log_or.exp())
                            }
                            SteOutcome::NotEstimable => "not estimable".into(),
                        };
                        if s.small_n {
                            format!("{value}; unreliable with {} < {SMALL_N} trials", s.n_trials)
                        } else {
                            value
                        }
                    }
                    None => na.clone(),
                };
                let _ = writeln!(out, "{:<44}{}", "Surrogate threshold effect", ste_text);
            }
            TrialLevel::Unavailable { reason } => {
                let _ = writeln!(out, "{:<44}{}", "Trial-level assessment", reason);
            }
        }
        let _ = writeln!(
            out,
            "{:<44}{}",
            "Bivariate Plackett Copula Global OR",
            self.global_or.as_ref().map_or(na.clone(), Estimate::render)
        );
        let _ = writeln!(
            out,
            "Verdict: {}, {}",
            self.verdict.trial_level.as_str(),
            self.verdict.individual.as_str()
        );

        if !self.effects.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<16}{:>8}{:>10}{:>10}{:>10}{:>10}",
                "Trial", "n", "log OR", "SE", "log HR", "SE"
            );
            for e in &self.effects {
                let _ = writeln!(
                    out,
                    "{:<16}{:>8}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
                    e.trial_id, e.n, e.log_or, e.log_or_se, e.log_hr, e.log_hr_se
                );
            }
        }
        if !self.excluded_trials.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Excluded trials: {}", self.excluded_trials.join(", "));
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Warnings:");
            for w in &self.warnings {
                let _ = writeln!(out, "  - {w}");
            }
        }
        out
    }
}
