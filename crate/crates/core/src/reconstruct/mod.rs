//! Individual patient data from digitized Kaplan-Meier curves.

mod ikm;
mod validate;

pub use ikm::{reconstruct_ipd, IntervalTrace, Reconstruction};
pub use validate::{kolmogorov_survival, ks_two_sample, validate, HrCheck, ReconstructionValidation};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Arm, CurvePoint, MrdStatus};

/// One reconstructed (or simulated) patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub trial_id: String,
    pub arm: Arm,
    pub status: MrdStatus,
    /// Months from randomization to event or censoring.
    pub time: f64,
    pub event: bool,
}

impl SubjectRecord {
    pub fn new(trial_id: &str, arm: Arm, status: MrdStatus, time: f64, event: bool) -> Self {
        SubjectRecord {
            trial_id: trial_id.to_string(),
            arm,
            status,
            time,
            event,
        }
    }
}

/// A change made while cleaning digitized input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Repair {
    Clamped { row: usize, original: f64, clamped: f64 },
    Sorted,
    DuplicateTime { time: f64, dropped: f64, kept: f64 },
    OriginPrepended,
    OriginReset { original: f64 },
    Monotone { time: f64, original: f64, repaired: f64 },
}

impl std::fmt::Display for Repair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Repair::Clamped { row, original, clamped } => {
                write!(f, "row {row}: survival {original} clamped to {clamped}")
            }
            Repair::Sorted => f.write_str("points sorted by time"),
            Repair::DuplicateTime { time, dropped, kept } => {
                write!(f, "duplicate time {time}: dropped survival {dropped}, kept {kept}")
            }
            Repair::OriginPrepended => f.write_str("origin (0, 1) prepended"),
            Repair::OriginReset { original } => {
                write!(f, "survival {original} at time 0 reset to 1")
            }
            Repair::Monotone { time, original, repaired } => {
                write!(f, "time {time}: survival {original} lowered to {repaired}")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReconstructError {
    #[error("curve has no points")]
    EmptyCurve,
    #[error("invalid curve point ({time}, {survival})")]
    InvalidPoint { time: f64, survival: f64 },
    #[error("curve has {0} point(s) after cleaning; at least 2 required")]
    DegenerateCurve(usize),
    #[error("at-risk count {count} at time {time} exceeds the prior count {prior}")]
    InconsistentAtRisk { time: f64, count: u64, prior: u64 },
    #[error("at-risk times must be strictly increasing (time {0} repeats or goes back)")]
    UnorderedAtRisk(f64),
    #[error("no at-risk table")]
    MissingAtRisk,
    #[error("zero sample size")]
    ZeroSampleSize,
}

/// Cleaned curve points plus the repairs that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub points: Vec<CurvePoint>,
    pub repairs: Vec<Repair>,
}

/// Sorts, dedups (keeping the lowest survival), anchors the curve at (0, 1)
/// and enforces a nonincreasing curve by running minimum.
pub fn preprocess(points: &[CurvePoint]) -> Result<Preprocessed, ReconstructError> {
    if points.is_empty() {
        return Err(ReconstructError::EmptyCurve);
    }
    if let Some(p) = points.iter().find(|p| {
        !(p.time.is_finite() && p.time >= 0.0 && (0.0..=1.0).contains(&p.survival))
    }) {
        return Err(ReconstructError::InvalidPoint {
            time: p.time,
            survival: p.survival,
        });
    }
    let mut repairs = Vec::new();
    let mut pts = points.to_vec();
    if pts.windows(2).any(|w| w[1].time < w[0].time) {
        pts.sort_by(|a, b| a.time.total_cmp(&b.time));
        repairs.push(Repair::Sorted);
    }

    let mut dedup: Vec<CurvePoint> = Vec::with_capacity(pts.len());
    for p in pts {
        match dedup.last_mut() {
            Some(last) if last.time == p.time => {
                let (kept, dropped) = if p.survival < last.survival {
                    (p.survival, last.survival)
                } else {
                    (last.survival, p.survival)
                };
                last.survival = kept;
                repairs.push(Repair::DuplicateTime {
                    time: p.time,
                    dropped,
                    kept,
                });
            }
            _ => dedup.push(p),
        }
    }

    if dedup[0].time > 0.0 {
        dedup.insert(0, CurvePoint::new(0.0, 1.0));
        repairs.push(Repair::OriginPrepended);
    } else if dedup[0].survival < 1.0 {
        repairs.push(Repair::OriginReset {
            original: dedup[0].survival,
        });
        dedup[0].survival = 1.0;
    }

    let mut floor = 1.0_f64;
    for p in dedup.iter_mut() {
        if p.survival > floor {
            repairs.push(Repair::Monotone {
                time: p.time,
                original: p.survival,
                repaired: floor,
            });
            p.survival = floor;
        }
        floor = p.survival;
    }
    Ok(Preprocessed {
        points: dedup,
        repairs,
    })
}

#[derive(Debug, Error)]
pub enum IpdCsvError {
    #[error("malformed IPD CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("IPD row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Serialize, Deserialize)]
struct IpdRow {
    trial_id: String,
    arm: String,
    mrd_status: String,
    time: f64,
    event: u8,
}

/// Writes `trial_id,arm,mrd_status,time,event` rows.
pub fn write_ipd_csv<W: Write>(records: &[SubjectRecord], writer: W) -> Result<(), IpdCsvError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(IpdRow {
            trial_id: r.trial_id.clone(),
            arm: r.arm.as_str().into(),
            mrd_status: r.status.as_str().into(),
            time: r.time,
            event: u8::from(r.event),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_ipd_csv<R: Read>(reader: R) -> Result<Vec<SubjectRecord>, IpdCsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize::<IpdRow>().enumerate() {
        let rec = rec?;
        let bad = |message: String| IpdCsvError::Row { row, message };
        let arm = Arm::parse(&rec.arm).ok_or_else(|| bad(format!("unknown arm {:?}", rec.arm)))?;
        let status = MrdStatus::parse(&rec.mrd_status)
            .ok_or_else(|| bad(format!("unknown mrd_status {:?}", rec.mrd_status)))?;
        if !(rec.time.is_finite() && rec.time >= 0.0) {
            return Err(bad(format!("invalid time {}", rec.time)));
        }
        if rec.event > 1 {
            return Err(bad(format!("event must be 0 or 1, got {}", rec.event)));
        }
        out.push(SubjectRecord {
            trial_id: rec.trial_id,
            arm,
            status,
            time: rec.time,
            event: rec.event == 1,
        });
    }
    Ok(out)
}
