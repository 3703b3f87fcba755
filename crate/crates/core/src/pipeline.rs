//! End-to-end analysis: config → patient data → effects → surrogacy report.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::copula::{fit_stage1, fit_stage2, global_or, CopulaError, CopulaFit, Stage1Options};
use crate::ingest::{
    effective_sample_size, parse_curve_csv, stratum_name, AnalysisConfig, AnalysisOptions,
    BootstrapConfig, ConfigError, IngestError, OutputConfig, StratumKey, TrialConfig, TrialSource,
    STRATA,
};
use crate::meta::{ste, wls_fit, wls_with_ci, TrialEffects, Weighting, WlsFit};
use crate::reconstruct::{
    read_ipd_csv, reconstruct_ipd, validate, write_ipd_csv, ReconstructionValidation, SubjectRecord,
};
use crate::report::{verdict, EffectsRow, Estimate, R2Summary, SurrogacyReport, TrialLevel};
use crate::simlab::{simulate, SimScenario, Simulation};
use crate::survival::{cox_loghr, logodds_mrd, median_followup, or_table_from_ipd, SurvivalError};
use crate::svg::scatter_svg;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {message}")]
    Data { context: String, message: String },
    #[error("{context}: {message}")]
    Convergence { context: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 for configuration problems, 2 for bad data, 3 for fits that fail.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data { .. } | PipelineError::Io { .. } => 2,
            PipelineError::Convergence { .. } => 3,
        }
    }

    fn data(context: impl Into<String>, message: impl ToString) -> Self {
        PipelineError::Data {
            context: context.into(),
            message: message.to_string(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Command-line adjustments layered over the config file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub exclude_trials: Vec<String>,
}

/// Reconstruction quality for one stratum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StratumQc {
    pub trial_id: String,
    pub stratum: String,
    pub validation: ReconstructionValidation,
    pub repairs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HrQc {
    pub trial_id: String,
    pub reported_hr: f64,
    pub refit_hr: Option<f64>,
    pub within_tolerance: bool,
}

#[derive(Clone, Debug)]
pub struct LoadedTrial {
    pub config: TrialConfig,
    pub ipd: Vec<SubjectRecord>,
    pub qc: Vec<StratumQc>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedTrials {
    pub trials: Vec<LoadedTrial>,
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

impl LoadedTrials {
    fn exclude(&mut self, id: &str, reason: String) {
        warn!("trial {id} excluded: {reason}");
        self.excluded.push(id.to_string());
        self.warnings.push(format!("trial {id} excluded: {reason}"));
    }

    pub fn all_ipd(&self) -> Vec<SubjectRecord> {
        self.trials.iter().flat_map(|t| t.ipd.iter().cloned()).collect()
    }

    pub fn all_qc(&self) -> Vec<StratumQc> {
        self.trials.iter().flat_map(|t| t.qc.iter().cloned()).collect()
    }
}

fn read_ipd_file(path: &Path) -> Result<Vec<SubjectRecord>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    read_ipd_csv(file).map_err(|e| PipelineError::data(path.display().to_string(), e))
}

/// Reconstructs (or reads) patient data for every trial not excluded.
/// Trials with a missing stratum or at-risk table are dropped with a
/// warning; anything else that fails to parse is a hard error.
pub fn load_trials(cfg: &AnalysisConfig, exclude: &[String]) -> Result<LoadedTrials, PipelineError> {
    let mut out = LoadedTrials::default();
    let mut ipd_files: BTreeMap<PathBuf, Vec<SubjectRecord>> = BTreeMap::new();
    for trial in &cfg.trials {
        if exclude.contains(&trial.id) {
            out.exclude(&trial.id, "listed in exclude_trials".into());
            continue;
        }
        let mut ipd = Vec::new();
        let mut qc = Vec::new();
        match trial.source() {
            TrialSource::Ipd(path) => {
                let path = cfg.resolve(path);
                if !ipd_files.contains_key(&path) {
                    let rows = read_ipd_file(&path)?;
                    ipd_files.insert(path.clone(), rows);
                }
                ipd.extend(ipd_files[&path].iter().filter(|r| r.trial_id == trial.id).cloned());
                let missing: Vec<String> = STRATA
                    .iter()
                    .filter(|&&(arm, status)| !ipd.iter().any(|r| r.arm == arm && r.status == status))
                    .map(|&(arm, status)| stratum_name(arm, status))
                    .collect();
                if !missing.is_empty() {
                    out.exclude(&trial.id, format!("no patients in stratum {}", missing.join(", ")));
                    continue;
                }
            }
            TrialSource::Curves(strata) => {
                if let Some((arm, status, _)) = strata.iter().find(|s| s.2.is_none()) {
                    out.exclude(&trial.id, format!("missing stratum {}", stratum_name(*arm, *status)));
                    continue;
                }
                let mut skip = None;
                for (arm, status, files) in strata {
                    let files = files.expect("checked above");
                    let key = StratumKey::new(trial.id.clone(), arm, status);
                    let context = format!("trial {}, stratum {}", trial.id, stratum_name(arm, status));
                    let at_risk = files.at_risk.as_ref().map(|p| cfg.resolve(p));
                    let loaded = match parse_curve_csv(&cfg.resolve(&files.curve), at_risk.as_deref(), key, files.n) {
                        Ok(l) => l,
                        Err(IngestError::MissingAtRisk(_)) => {
                            skip = Some(format!("stratum {} has no at-risk table", stratum_name(arm, status)));
                            break;
                        }
                        Err(e) => return Err(PipelineError::data(context, e)),
                    };
                    let rec = reconstruct_ipd(&loaded.value).map_err(|e| PipelineError::data(&context, e))?;
                    let validation = validate(&loaded.value, &rec.subjects, None);
                    let repairs = loaded.repairs.iter().chain(&rec.repairs).map(|r| r.to_string()).collect();
                    qc.push(StratumQc {
                        trial_id: trial.id.clone(),
                        stratum: stratum_name(arm, status),
                        validation,
                        repairs,
                    });
                    ipd.extend(rec.subjects);
                }
                if let Some(reason) = skip {
                    out.exclude(&trial.id, reason);
                    continue;
                }
            }
        }
        info!("trial {}: {} patients", trial.id, ipd.len());
        out.trials.push(LoadedTrial {
            config: trial.clone(),
            ipd,
            qc,
        });
    }
    Ok(out)
}

/// Compares the Cox HR refitted on reconstructed data with the published one.
pub fn hr_checks(trials: &[LoadedTrial], tolerance: f64) -> Vec<HrQc> {
    trials
        .iter()
        .filter_map(|t| {
            let reported = t.config.reported_hr?;
            let refit = cox_loghr(&t.ipd).ok().map(|e| e.estimate.exp());
            Some(HrQc {
                trial_id: t.config.id.clone(),
                reported_hr: reported,
                refit_hr: refit,
                within_tolerance: refit.is_some_and(|r| (r.ln() - reported.ln()).abs() <= tolerance),
            })
        })
        .collect()
}

/// Everything one analysis produces.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub report: SurrogacyReport,
    pub ipd: Vec<SubjectRecord>,
    pub effects: Vec<TrialEffects>,
    pub wls: Vec<(Weighting, Option<WlsFit>)>,
    pub qc: Vec<StratumQc>,
    pub hr_qc: Vec<HrQc>,
    pub copula: CopulaFit,
}

fn convergence(context: &str, e: impl ToString) -> PipelineError {
    PipelineError::Convergence {
        context: context.to_string(),
        message: e.to_string(),
    }
}

fn trial_effects(t: &LoadedTrial) -> Result<(TrialEffects, bool), PipelineError> {
    let context = format!("trial {}", t.config.id);
    let table = t.config.reported_or_table.unwrap_or_else(|| or_table_from_ipd(&t.ipd));
    let or = logodds_mrd(&table).map_err(|e| PipelineError::data(&context, e))?;
    let hr = cox_loghr(&t.ipd).map_err(|e| match e {
        SurvivalError::Separation { .. } | SurvivalError::NonConvergence { .. } => convergence(&context, e),
        other => PipelineError::data(&context, other),
    })?;
    let n = effective_sample_size(t.ipd.len() as u64, t.config.reported_or_table.map(|r| r.total()));
    Ok((
        TrialEffects {
            trial_id: t.config.id.clone(),
            log_or: or.effect.estimate,
            log_or_se: or.effect.std_error,
            log_hr: hr.estimate,
            log_hr_se: hr.std_error,
            n,
        },
        or.continuity_corrected,
    ))
}

type TrialLevelFits = (R2Summary, Option<crate::meta::SteResult>, Vec<(Weighting, Option<WlsFit>)>);

fn trial_level(
    effects: &[TrialEffects],
    copula: &CopulaFit,
    options: &AnalysisOptions,
    seed: u64,
    replicates: usize,
) -> Result<TrialLevelFits, String> {
    let iv = wls_with_ci(effects, Weighting::InverseVariance, replicates, seed).map_err(|e| e.to_string())?;
    let ss = wls_with_ci(effects, Weighting::SampleSize, replicates, seed).map_err(|e| e.to_string())?;
    let stage2 = fit_stage2(&copula.trial_effects()).map_err(|e| format!("copula stage 2: {e}"))?;
    let ste = ste(effects, options.ste_weighting).map_err(|e| e.to_string())?;
    let summary = R2Summary {
        r2_wls_inverse_variance: Estimate::new(iv.fit.r2, iv.ci.lower, iv.ci.upper),
        r2_wls_sample_size: Estimate::new(ss.fit.r2, ss.ci.lower, ss.ci.upper),
        r2_copula: Estimate::new(stage2.r2.r2, stage2.r2.lower, stage2.r2.upper),
        copula_correlation: Estimate::new(stage2.correlation, stage2.correlation_ci.0, stage2.correlation_ci.1),
        bootstrap_shortfall: iv.ci.shortfall + ss.ci.shortfall,
    };
    Ok((
        summary,
        Some(ste),
        vec![
            (Weighting::InverseVariance, Some(iv.fit)),
            (Weighting::SampleSize, Some(ss.fit)),
        ],
    ))
}

/// Runs the full analysis in memory.
pub fn run_analysis(cfg: &AnalysisConfig, opts: &RunOptions) -> Result<Analysis, PipelineError> {
    let seed = opts.seed.unwrap_or(cfg.bootstrap.seed);
    let replicates = opts.replicates.unwrap_or(cfg.bootstrap.replicates);
    if replicates == 0 {
        return Err(ConfigError::Invalid("replicates must be positive".into()).into());
    }
    let mut exclude = cfg.analysis.exclude_trials.clone();
    exclude.extend(opts.exclude_trials.iter().cloned());

    let mut loaded = load_trials(cfg, &exclude)?;
    if loaded.trials.is_empty() {
        return Err(PipelineError::data("analysis", "no usable trials"));
    }
    let mut warnings = std::mem::take(&mut loaded.warnings);

    let hr_qc = hr_checks(&loaded.trials, cfg.analysis.hr_tolerance);
    for h in hr_qc.iter().filter(|h| !h.within_tolerance) {
        warnings.push(format!(
            "trial {}: refitted HR {} differs from reported HR {:.3} by more than the tolerance",
            h.trial_id,
            h.refit_hr.map_or("n/a".into(), |r| format!("{r:.3}")),
            h.reported_hr
        ));
    }

    let mut effects = Vec::new();
    let mut corrected = Vec::new();
    for t in &loaded.trials {
        let (e, c) = trial_effects(t)?;
        if c {
            warnings.push(format!("trial {}: zero cell in the 2x2 table, 0.5 added to every cell", e.trial_id));
            corrected.push(e.trial_id.clone());
        }
        effects.push(e);
    }

    let ipd = loaded.all_ipd();
    let median = match median_followup(&ipd) {
        Ok(m) => Some(m),
        Err(e) => {
            warnings.push(format!("median follow-up: {e}"));
            None
        }
    };

    let copula = fit_stage1(&ipd, &Stage1Options::default()).map_err(|e| match e {
        CopulaError::NoUsableTrials => PipelineError::data("copula stage 1", e),
        other => convergence("copula stage 1", other),
    })?;
    for x in &copula.excluded {
        warnings.push(format!("trial {} left out of the copula fit: {}", x.trial_id, x.reason));
    }
    let theta = global_or(&copula);
    let (lo, hi) = theta.ci95();
    let or_estimate = Estimate::new(theta.theta, lo, hi);

    let (level, wls) = if effects.len() < 3 {
        (
            TrialLevel::Unavailable {
                reason: format!("TooFewTrials: {} trial(s); at least 3 required", effects.len()),
            },
            vec![
                (Weighting::InverseVariance, wls_fit(&effects, Weighting::InverseVariance).ok()),
                (Weighting::SampleSize, wls_fit(&effects, Weighting::SampleSize).ok()),
            ],
        )
    } else {
        match trial_level(&effects, &copula, &cfg.analysis, seed, replicates) {
            Ok((r2, ste, wls)) => (TrialLevel::Available { r2, ste }, wls),
            Err(reason) => {
                warnings.push(format!("trial-level assessment unavailable: {reason}"));
                (
                    TrialLevel::Unavailable { reason },
                    vec![(Weighting::InverseVariance, None), (Weighting::SampleSize, None)],
                )
            }
        }
    };

    let r2_list = match &level {
        TrialLevel::Available { r2, .. } => vec![
            Some(r2.r2_wls_inverse_variance),
            Some(r2.r2_wls_sample_size),
            Some(r2.r2_copula),
        ],
        TrialLevel::Unavailable { .. } => Vec::new(),
    };
    let verdict = verdict(&r2_list, Some(&or_estimate));

    let rows = loaded
        .trials
        .iter()
        .zip(&effects)
        .map(|(t, e)| {
            let c = copula.trials.iter().find(|c| c.trial_id == e.trial_id);
            EffectsRow {
                trial_id: e.trial_id.clone(),
                n: e.n,
                mrd_measure_time: Some(t.config.mrd_measure_time),
                sensitivity_label: Some(t.config.sensitivity_label.clone()),
                log_or: e.log_or,
                log_or_se: e.log_or_se,
                or_continuity_corrected: corrected.contains(&e.trial_id),
                log_hr: e.log_hr,
                log_hr_se: e.log_hr_se,
                copula_log_or: c.map(|c| c.params.b),
                copula_log_or_se: c.map(|c| c.se.b),
                copula_log_hr: c.map(|c| c.params.gamma),
                copula_log_hr_se: c.map(|c| c.se.gamma),
            }
        })
        .collect();

    let report = SurrogacyReport {
        indication: cfg.indication.clone(),
        endpoint: cfg.endpoint.clone(),
        conventions: Default::default(),
        seed,
        replicates,
        n_trials: effects.len(),
        pooled_sample_size: effects.iter().map(|e| e.n).sum(),
        median_followup: median,
        trial_level: level,
        global_or: Some(or_estimate),
        effects: rows,
        excluded_trials: loaded.excluded.clone(),
        warnings,
        verdict,
    };
    Ok(Analysis {
        report,
        qc: loaded.all_qc(),
        ipd,
        effects,
        wls,
        hr_qc,
        copula,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path).map(BufWriter::new).map_err(|e| PipelineError::io(path, e))
}

pub fn write_ipd(path: &Path, ipd: &[SubjectRecord]) -> Result<(), PipelineError> {
    write_ipd_csv(ipd, create(path)?).map_err(|e| PipelineError::data(path.display().to_string(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| PipelineError::data("json", e))?;
    s.push('\n');
    write_file(path, &s)
}

/// Per-stratum curve fit and hazard-ratio checks as one JSON document.
pub fn write_qc(path: &Path, strata: &[StratumQc], hazard_ratios: &[HrQc]) -> Result<(), PipelineError> {
    #[derive(Serialize)]
    struct Qc<'a> {
        strata: &'a [StratumQc],
        hazard_ratios: &'a [HrQc],
    }
    write_json(path, &Qc { strata, hazard_ratios })
}

/// Writes the report, tables and figures into `dir`; returns the paths.
pub fn write_artifacts(analysis: &Analysis, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<(), PipelineError> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    put("report.json", analysis.report.to_json())?;
    put("report.txt", analysis.report.render_text())?;
    for (weighting, fit) in &analysis.wls {
        put(
            &format!("scatter_{}.svg", weighting.as_str()),
            scatter_svg(&analysis.effects, *weighting, fit.as_ref()),
        )?;
    }

    let effects_path = dir.join("effects.csv");
    let mut w = csv::Writer::from_writer(create(&effects_path)?);
    for row in &analysis.report.effects {
        w.serialize(row).map_err(|e| PipelineError::data("effects.csv", e))?;
    }
    w.flush().map_err(|e| PipelineError::io(&effects_path, e))?;
    written.push(effects_path);

    let ipd_path = dir.join("ipd.csv");
    write_ipd(&ipd_path, &analysis.ipd)?;
    written.push(ipd_path);

    let qc_path = dir.join("reconstruction_qc.json");
    write_qc(&qc_path, &analysis.qc, &analysis.hr_qc)?;
    written.push(qc_path);
    Ok(written)
}

/// Simulates a scenario and writes `ipd.csv`, `truth.csv` and an
/// `analysis.toml` that analyzes the simulated data.
pub fn simulate_to_dir(
    scenario: &SimScenario,
    dir: &Path,
    replicates: usize,
) -> Result<Simulation, PipelineError> {
    let sim = simulate(scenario).map_err(|e| PipelineError::data("scenario", e))?;
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    write_ipd(&dir.join("ipd.csv"), &sim.records)?;

    let truth_path = dir.join("truth.csv");
    let mut w = csv::Writer::from_writer(create(&truth_path)?);
    for t in &sim.truth {
        w.serialize(t).map_err(|e| PipelineError::data("truth.csv", e))?;
    }
    w.flush().map_err(|e| PipelineError::io(&truth_path, e))?;

    let cfg = AnalysisConfig {
        indication: "simulated".into(),
        endpoint: "PFS".into(),
        bootstrap: BootstrapConfig {
            seed: scenario.seed,
            replicates,
        },
        output: OutputConfig { dir: "out".into() },
        analysis: AnalysisOptions::default(),
        trials: sim
            .truth
            .iter()
            .map(|t| TrialConfig {
                id: t.trial_id.clone(),
                mrd_measure_time: 0.0,
                sensitivity_label: "simulated".into(),
                reported_hr: None,
                reported_or_table: None,
                strata: BTreeMap::new(),
                ipd: Some("ipd.csv".into()),
            })
            .collect(),
        base_dir: PathBuf::new(),
    };
    let text = toml::to_string(&cfg).map_err(|e| PipelineError::data("analysis.toml", e))?;
    write_file(&dir.join("analysis.toml"), &text)?;
    Ok(sim)
}
