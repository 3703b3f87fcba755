#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use surrogacy::ingest::{
    stratum_name, write_curve_csv, Arm, AtRiskRow, CurveDataset, CurvePoint, MrdStatus, StratumKey,
    STRATA,
};
use surrogacy::reconstruct::SubjectRecord;
use surrogacy::survival::km_from_pairs;

/// Reads a Kaplan-Meier curve off at `n_points` equally spaced times and
/// tabulates the numbers at risk at `n_risk` equally spaced times. The two
/// grids share only the origin.
pub fn digitize(key: StratumKey, pairs: &[(f64, bool)], n_points: usize, n_risk: usize) -> CurveDataset {
    let km = km_from_pairs(pairs).unwrap();
    let t_max = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let points: Vec<CurvePoint> = (0..n_points)
        .map(|k| {
            let t = t_max * k as f64 / n_points as f64;
            CurvePoint::new(t, km.at(t))
        })
        .collect();
    let at_risk: Vec<AtRiskRow> = (0..n_risk)
        .map(|j| {
            let t = t_max * j as f64 / n_risk as f64;
            AtRiskRow::new(t, pairs.iter().filter(|p| p.0 >= t).count() as u64)
        })
        .collect();
    CurveDataset::new(key, points, at_risk, pairs.len() as u64).unwrap()
}

pub fn stratum(ipd: &[SubjectRecord], trial: &str, arm: Arm, status: MrdStatus) -> Vec<(f64, bool)> {
    ipd.iter()
        .filter(|r| r.trial_id == trial && r.arm == arm && r.status == status)
        .map(|r| (r.time, r.event))
        .collect()
}

/// Writes one digitized curve file per stratum of `trial` into `dir` and
/// returns the matching `[[trials]]` config block. Strata named in `skip` are
/// left out of both.
pub fn write_trial_curves(dir: &Path, ipd: &[SubjectRecord], trial: &str, skip: &[(Arm, MrdStatus)]) -> String {
    let mut block = String::new();
    let _ = writeln!(
        block,
        "[[trials]]\nid = \"{trial}\"\nmrd_measure_time = 9.0\nsensitivity_label = \"1e-5\"\n"
    );
    for &(arm, status) in &STRATA {
        if skip.contains(&(arm, status)) {
            continue;
        }
        let pairs = stratum(ipd, trial, arm, status);
        let curve = digitize(StratumKey::new(trial, arm, status), &pairs, 40, 7);
        let name = format!("{trial}_{}.csv", stratum_name(arm, status));
        write_curve_csv(&curve, File::create(dir.join(&name)).unwrap()).unwrap();
        let _ = writeln!(
            block,
            "[trials.strata.{}]\ncurve = \"{name}\"\n",
            stratum_name(arm, status)
        );
    }
    block
}

pub fn config_header(out: &str, replicates: usize) -> String {
    format!(
        "indication = \"TEST\"\nendpoint = \"PFS\"\n\n[bootstrap]\nseed = 11\nreplicates = {replicates}\n\n[output]\ndir = \"{out}\"\n\n"
    )
}
