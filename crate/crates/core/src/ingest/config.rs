//! TOML analysis configuration.
//!
//! ```toml
//! indication = "FL"
//! endpoint = "PFS"
//!
//! [bootstrap]
//! seed = 20240601
//! replicates = 10000
//!
//! [output]
//! dir = "out"
//!
//! [analysis]                       # optional table
//! exclude_trials = ["FOLL12"]
//! ste_weighting = "inverse_variance"
//! hr_tolerance = 0.05
//!
//! [[trials]]
//! id = "GALLIUM"
//! mrd_measure_time = 10.5
//! sensitivity_label = "PCR 1e-4"
//! reported_hr = 0.72                                 # optional
//! reported_or_table = { experimental = { negative = 250, positive = 50 },
//!                       control = { negative = 230, positive = 70 } }   # optional
//! [trials.strata.experimental_negative]
//! curve = "gallium_exp_neg.csv"
//! at_risk = "gallium_exp_neg_risk.csv"               # optional
//! n = 300                                            # optional
//! ```
//!
//! A trial supplies either the four `strata` tables or `ipd = "file.csv"`
//! (rows of an IPD file with a matching `trial_id`). Relative paths resolve
//! against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Arm, MrdStatus};
use crate::meta::Weighting;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub indication: String,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    pub bootstrap: BootstrapConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    pub trials: Vec<TrialConfig>,
    /// Directory the config was loaded from; relative paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_endpoint() -> String {
    "PFS".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

pub const DEFAULT_REPLICATES: usize = 10_000;

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisOptions {
    #[serde(default)]
    pub exclude_trials: Vec<String>,
    #[serde(default = "default_ste_weighting")]
    pub ste_weighting: Weighting,
    /// Acceptable |log refit HR − log reported HR|.
    #[serde(default = "default_hr_tolerance")]
    pub hr_tolerance: f64,
}

fn default_ste_weighting() -> Weighting {
    Weighting::InverseVariance
}

fn default_hr_tolerance() -> f64 {
    0.05
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            exclude_trials: Vec::new(),
            ste_weighting: default_ste_weighting(),
            hr_tolerance: default_hr_tolerance(),
        }
    }
}

/// Surrogate counts for one arm of a reported 2×2 table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmCounts {
    pub negative: u64,
    pub positive: u64,
}

/// Reported surrogate-by-arm counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrTable {
    pub experimental: ArmCounts,
    pub control: ArmCounts,
}

impl OrTable {
    pub fn new(exp_neg: u64, exp_pos: u64, ctrl_neg: u64, ctrl_pos: u64) -> Self {
        OrTable {
            experimental: ArmCounts {
                negative: exp_neg,
                positive: exp_pos,
            },
            control: ArmCounts {
                negative: ctrl_neg,
                positive: ctrl_pos,
            },
        }
    }

    pub fn total(&self) -> u64 {
        self.experimental.negative
            + self.experimental.positive
            + self.control.negative
            + self.control.positive
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumFiles {
    pub curve: PathBuf,
    #[serde(default)]
    pub at_risk: Option<PathBuf>,
    #[serde(default)]
    pub n: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub id: String,
    pub mrd_measure_time: f64,
    pub sensitivity_label: String,
    #[serde(default)]
    pub reported_hr: Option<f64>,
    #[serde(default)]
    pub reported_or_table: Option<OrTable>,
    /// Keys: `experimental_negative`, `experimental_positive`,
    /// `control_negative`, `control_positive`.
    #[serde(default)]
    pub strata: BTreeMap<String, StratumFiles>,
    #[serde(default)]
    pub ipd: Option<PathBuf>,
}

/// Where a trial's patient-level data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum TrialSource<'a> {
    Curves(Vec<(Arm, MrdStatus, Option<&'a StratumFiles>)>),
    Ipd(&'a Path),
}

pub const STRATA: [(Arm, MrdStatus); 4] = [
    (Arm::Experimental, MrdStatus::Negative),
    (Arm::Experimental, MrdStatus::Positive),
    (Arm::Control, MrdStatus::Negative),
    (Arm::Control, MrdStatus::Positive),
];

pub fn stratum_name(arm: Arm, status: MrdStatus) -> String {
    format!("{}_{}", arm.as_str(), status.as_str())
}

impl TrialConfig {
    pub fn source(&self) -> TrialSource<'_> {
        match &self.ipd {
            Some(p) => TrialSource::Ipd(p),
            None => TrialSource::Curves(
                STRATA
                    .iter()
                    .map(|&(arm, status)| (arm, status, self.strata.get(&stratum_name(arm, status))))
                    .collect(),
            ),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(format!("trial {}: {msg}", self.id)));
        if self.id.trim().is_empty() {
            return Err(ConfigError::Invalid("trial with empty id".into()));
        }
        if !(self.mrd_measure_time.is_finite() && self.mrd_measure_time >= 0.0) {
            return bad("mrd_measure_time must be a nonnegative number of months".into());
        }
        if let Some(hr) = self.reported_hr {
            if !(hr.is_finite() && hr > 0.0) {
                return bad(format!("reported_hr {hr} must be positive"));
            }
        }
        if let Some(t) = &self.reported_or_table {
            if t.experimental.negative + t.experimental.positive == 0
                || t.control.negative + t.control.positive == 0
            {
                return bad("reported_or_table has an empty arm".into());
            }
        }
        if self.ipd.is_some() && !self.strata.is_empty() {
            return bad("give either `ipd` or `strata`, not both".into());
        }
        if self.ipd.is_none() && self.strata.is_empty() {
            return bad("no data source: give `strata` or `ipd`".into());
        }
        let known: Vec<String> = STRATA.iter().map(|&(a, s)| stratum_name(a, s)).collect();
        for name in self.strata.keys() {
            if !known.contains(name) {
                return bad(format!("unknown stratum `{name}`"));
            }
        }
        Ok(())
    }
}

impl AnalysisConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: AnalysisConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.trials.is_empty() {
            return Err(ConfigError::Invalid("no trials listed".into()));
        }
        if self.bootstrap.replicates == 0 {
            return Err(ConfigError::Invalid("bootstrap.replicates must be positive".into()));
        }
        if !(self.analysis.hr_tolerance.is_finite() && self.analysis.hr_tolerance > 0.0) {
            return Err(ConfigError::Invalid("analysis.hr_tolerance must be positive".into()));
        }
        let mut ids: Vec<&str> = self.trials.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid(format!("duplicate trial id {}", w[0])));
        }
        self.trials.iter().try_for_each(TrialConfig::validate)
    }
}
