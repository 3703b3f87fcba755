//! Digitized survival curves, at-risk tables and analysis configuration.
//!
//! Curve files are comma-separated with a `time,survival` header. The
//! at-risk table either lives in the same file as sibling `risk_time,n_at_risk`
//! columns (blank cells where the table is shorter than the curve) or in a
//! separate file with that header.

mod config;

pub use config::{
    stratum_name, AnalysisConfig, AnalysisOptions, ArmCounts, BootstrapConfig, ConfigError, DEFAULT_REPLICATES,
    OrTable, OutputConfig, StratumFiles, TrialConfig, TrialSource, STRATA,
};

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reconstruct::{preprocess, Repair};

/// Survival values outside `[0, 1]` by at most this much are clamped.
pub const CLAMP_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Experimental,
    Control,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Experimental => "experimental",
            Arm::Control => "control",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "experimental" | "exp" | "treatment" => Some(Arm::Experimental),
            "control" | "ctrl" => Some(Arm::Control),
            _ => None,
        }
    }

    /// Treatment indicator used by every regression in the crate.
    pub fn indicator(self) -> f64 {
        match self {
            Arm::Experimental => 1.0,
            Arm::Control => 0.0,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Surrogate status. `Negative` (e.g. MRD negativity) is the favourable outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MrdStatus {
    Negative,
    Positive,
}

impl MrdStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MrdStatus::Negative => "negative",
            MrdStatus::Positive => "positive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" | "neg" | "mrd-" => Some(MrdStatus::Negative),
            "positive" | "pos" | "mrd+" => Some(MrdStatus::Positive),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            MrdStatus::Negative => MrdStatus::Positive,
            MrdStatus::Positive => MrdStatus::Negative,
        }
    }
}

impl fmt::Display for MrdStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (trial, arm, surrogate status) stratum.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StratumKey {
    pub trial_id: String,
    pub arm: Arm,
    pub status: MrdStatus,
}

impl StratumKey {
    pub fn new(trial_id: impl Into<String>, arm: Arm, status: MrdStatus) -> Self {
        StratumKey {
            trial_id: trial_id.into(),
            arm,
            status,
        }
    }
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.trial_id, self.arm, self.status)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time: f64,
    pub survival: f64,
}

impl CurvePoint {
    pub fn new(time: f64, survival: f64) -> Self {
        CurvePoint { time, survival }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtRiskRow {
    pub time: f64,
    pub n_at_risk: u64,
}

impl AtRiskRow {
    pub fn new(time: f64, n_at_risk: u64) -> Self {
        AtRiskRow { time, n_at_risk }
    }
}

/// Digitized curve plus at-risk table for one stratum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveDataset {
    pub key: StratumKey,
    pub points: Vec<CurvePoint>,
    pub at_risk: Vec<AtRiskRow>,
    pub total_n: u64,
}

impl CurveDataset {
    /// Checks the structural invariants; points are expected to be cleaned.
    pub fn new(
        key: StratumKey,
        points: Vec<CurvePoint>,
        at_risk: Vec<AtRiskRow>,
        total_n: u64,
    ) -> Result<Self, IngestError> {
        if points.len() < 2 {
            return Err(IngestError::TooFewPoints {
                stratum: key.to_string(),
                count: points.len(),
            });
        }
        if at_risk.is_empty() {
            return Err(IngestError::MissingAtRisk(key.to_string()));
        }
        if total_n == 0 {
            return Err(IngestError::ZeroSampleSize(key.to_string()));
        }
        if points[0].survival > 1.0 {
            return Err(IngestError::SurvivalOutOfRange {
                row: 0,
                value: points[0].survival,
            });
        }
        Ok(CurveDataset {
            key,
            points,
            at_risk,
            total_n,
        })
    }
}

/// A parsed value plus the repairs applied while cleaning it.
#[derive(Clone, Debug, PartialEq)]
pub struct Loaded<T> {
    pub value: T,
    pub repairs: Vec<Repair>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("non-numeric cell in column `{column}` at data row {row}: {value:?}")]
    NonNumericCell {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("curve has no points")]
    EmptyCurve,
    #[error("stratum {stratum}: {count} curve point(s), at least 2 required")]
    TooFewPoints { stratum: String, count: usize },
    #[error("survival {value} at data row {row} is outside [0, 1] by more than {CLAMP_TOLERANCE}")]
    SurvivalOutOfRange { row: usize, value: f64 },
    #[error("negative or non-finite time {value} at data row {row}")]
    InvalidTime { row: usize, value: f64 },
    #[error("stratum {0} has no at-risk table")]
    MissingAtRisk(String),
    #[error("stratum {0} has zero sample size")]
    ZeroSampleSize(String),
    #[error("first at-risk time {risk_time} is after the first curve time {curve_time}")]
    AtRiskStartsLate { risk_time: f64, curve_time: f64 },
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn parse_cell(
    record: &csv::StringRecord,
    idx: usize,
    row: usize,
    column: &'static str,
) -> Result<Option<f64>, IngestError> {
    let raw = record.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| IngestError::NonNumericCell {
            row,
            column,
            value: raw.to_string(),
        })
}

fn parse_count(
    record: &csv::StringRecord,
    idx: usize,
    row: usize,
    column: &'static str,
) -> Result<Option<u64>, IngestError> {
    match parse_cell(record, idx, row, column)? {
        None => Ok(None),
        Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(Some(v as u64)),
        Some(_) => Err(IngestError::NonNumericCell {
            row,
            column,
            value: record.get(idx).unwrap_or("").trim().to_string(),
        }),
    }
}

/// Raw contents of a curve file before cleaning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCurve {
    pub points: Vec<CurvePoint>,
    pub at_risk: Vec<AtRiskRow>,
    pub repairs: Vec<Repair>,
}

/// Reads `time,survival` rows (and sibling at-risk columns when present),
/// clamping small survival excursions.
pub fn read_curve_csv<R: Read>(reader: R) -> Result<RawCurve, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let time_idx = column_index(&headers, "time").ok_or(IngestError::MissingColumn("time"))?;
    let surv_idx =
        column_index(&headers, "survival").ok_or(IngestError::MissingColumn("survival"))?;
    let risk_time_idx = column_index(&headers, "risk_time");
    let risk_n_idx = column_index(&headers, "n_at_risk");
    let risk_cols = match (risk_time_idx, risk_n_idx) {
        (Some(t), Some(n)) => Some((t, n)),
        (Some(_), None) => return Err(IngestError::MissingColumn("n_at_risk")),
        (None, Some(_)) => return Err(IngestError::MissingColumn("risk_time")),
        (None, None) => None,
    };

    let mut out = RawCurve::default();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let time = parse_cell(&record, time_idx, row, "time")?;
        let surv = parse_cell(&record, surv_idx, row, "survival")?;
        match (time, surv) {
            (Some(time), Some(surv)) => {
                if time < 0.0 {
                    return Err(IngestError::InvalidTime { row, value: time });
                }
                let clamped = clamp_survival(surv, row)?;
                if clamped != surv {
                    out.repairs.push(Repair::Clamped {
                        row,
                        original: surv,
                        clamped,
                    });
                }
                out.points.push(CurvePoint::new(time, clamped));
            }
            (None, None) => {}
            (None, Some(_)) => {
                return Err(IngestError::NonNumericCell {
                    row,
                    column: "time",
                    value: String::new(),
                })
            }
            (Some(_), None) => {
                return Err(IngestError::NonNumericCell {
                    row,
                    column: "survival",
                    value: String::new(),
                })
            }
        }
        if let Some((ti, ni)) = risk_cols {
            if let Some(row_risk) = read_risk_cells(&record, ti, ni, row)? {
                out.at_risk.push(row_risk);
            }
        }
    }
    if out.points.is_empty() {
        return Err(IngestError::EmptyCurve);
    }
    Ok(out)
}

fn read_risk_cells(
    record: &csv::StringRecord,
    time_idx: usize,
    n_idx: usize,
    row: usize,
) -> Result<Option<AtRiskRow>, IngestError> {
    let t = parse_cell(record, time_idx, row, "risk_time")?;
    let n = parse_count(record, n_idx, row, "n_at_risk")?;
    match (t, n) {
        (Some(t), Some(n)) => {
            if t < 0.0 {
                return Err(IngestError::InvalidTime { row, value: t });
            }
            Ok(Some(AtRiskRow::new(t, n)))
        }
        (None, None) => Ok(None),
        (None, Some(_)) => Err(IngestError::NonNumericCell {
            row,
            column: "risk_time",
            value: String::new(),
        }),
        (Some(_), None) => Err(IngestError::NonNumericCell {
            row,
            column: "n_at_risk",
            value: String::new(),
        }),
    }
}

fn clamp_survival(value: f64, row: usize) -> Result<f64, IngestError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else if value > 1.0 && value <= 1.0 + CLAMP_TOLERANCE {
        Ok(1.0)
    } else if (-CLAMP_TOLERANCE..0.0).contains(&value) {
        Ok(0.0)
    } else {
        Err(IngestError::SurvivalOutOfRange { row, value })
    }
}

/// Reads a stand-alone `risk_time,n_at_risk` table.
pub fn read_at_risk_csv<R: Read>(reader: R) -> Result<Vec<AtRiskRow>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ti = column_index(&headers, "risk_time").ok_or(IngestError::MissingColumn("risk_time"))?;
    let ni = column_index(&headers, "n_at_risk").ok_or(IngestError::MissingColumn("n_at_risk"))?;
    let mut rows = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        if let Some(r) = read_risk_cells(&record?, ti, ni, row)? {
            rows.push(r);
        }
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<std::fs::File, IngestError> {
    std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a curve file (and an optional separate at-risk file) into a
/// cleaned [`CurveDataset`]. `total_n` defaults to the first at-risk count.
pub fn parse_curve_csv(
    path: &Path,
    at_risk_path: Option<&Path>,
    key: StratumKey,
    total_n: Option<u64>,
) -> Result<Loaded<CurveDataset>, IngestError> {
    let mut raw = read_curve_csv(open(path)?)?;
    if let Some(p) = at_risk_path {
        raw.at_risk = read_at_risk_csv(open(p)?)?;
    }
    build_dataset(raw, key, total_n)
}

/// Cleans raw curve data with the preprocessing rules and checks invariants.
pub fn build_dataset(
    raw: RawCurve,
    key: StratumKey,
    total_n: Option<u64>,
) -> Result<Loaded<CurveDataset>, IngestError> {
    let RawCurve {
        points,
        at_risk,
        mut repairs,
    } = raw;
    if at_risk.is_empty() {
        return Err(IngestError::MissingAtRisk(key.to_string()));
    }
    let first_curve = points
        .iter()
        .map(|p| p.time)
        .fold(f64::INFINITY, f64::min);
    let first_risk = at_risk
        .iter()
        .map(|r| r.time)
        .fold(f64::INFINITY, f64::min);
    if first_risk > first_curve {
        return Err(IngestError::AtRiskStartsLate {
            risk_time: first_risk,
            curve_time: first_curve,
        });
    }
    let cleaned = preprocess(&points).map_err(|_| IngestError::EmptyCurve)?;
    repairs.extend(cleaned.repairs);
    let n = total_n.unwrap_or(at_risk[0].n_at_risk);
    let dataset = CurveDataset::new(key, cleaned.points, at_risk, n)?;
    Ok(Loaded {
        value: dataset,
        repairs,
    })
}

/// Writes the dataset in the single-file layout accepted by [`read_curve_csv`].
pub fn write_curve_csv<W: Write>(dataset: &CurveDataset, writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "survival", "risk_time", "n_at_risk"])?;
    let rows = dataset.points.len().max(dataset.at_risk.len());
    for i in 0..rows {
        let (t, s) = dataset
            .points
            .get(i)
            .map(|p| (p.time.to_string(), p.survival.to_string()))
            .unwrap_or_default();
        let (rt, rn) = dataset
            .at_risk
            .get(i)
            .map(|r| (r.time.to_string(), r.n_at_risk.to_string()))
            .unwrap_or_default();
        w.write_record([t, s, rt, rn])?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Sample size used for weighting: the smaller of the reconstructed and the
/// reported 2×2-table totals.
pub fn effective_sample_size(ipd_n: u64, or_table_n: Option<u64>) -> u64 {
    match or_table_n {
        Some(table_n) => ipd_n.min(table_n),
        None => ipd_n,
    }
}
