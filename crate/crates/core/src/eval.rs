//! Threshold evaluation of abnormality scores: confusion counts, ROC, AUC and
//! accuracy, and comparisons across channel conditions.
//!
//! Scores are `Option<f64>`; unmeasured steps (`None`) are excluded before
//! counting. A score at or above the threshold is a positive prediction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::write_atomic;
use crate::{Error, Result};

/// Reporting threshold used when none is given.
pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return f64::NAN;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn tpr(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    pub fn fpr(&self) -> f64 {
        self.fp as f64 / (self.fp + self.tn) as f64
    }
}

fn measured(scores: &[Option<f64>], labels: &[bool]) -> Result<Vec<(f64, bool)>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    Ok(scores
        .iter()
        .zip(labels)
        .filter_map(|(s, &l)| s.filter(|v| !v.is_nan()).map(|v| (v, l)))
        .collect())
}

pub fn confusion(scores: &[Option<f64>], labels: &[bool], threshold: f64) -> Result<Confusion> {
    let mut c = Confusion::default();
    for (s, l) in measured(scores, labels)? {
        match (s >= threshold, l) {
            (true, true) => c.tp += 1,
            (false, true) => c.fn_ += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// Descending, from `+inf` to `-inf`.
    pub thresholds: Vec<f64>,
    /// `(fpr, tpr)` per threshold.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

pub fn roc(scores: &[Option<f64>], labels: &[bool]) -> Result<RocCurve> {
    let mut data = measured(scores, labels)?;
    let pos = data.iter().filter(|d| d.1).count();
    let neg = data.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::RocUndefined);
    }
    data.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut thresholds = vec![f64::INFINITY];
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < data.len() {
        let s = data[i].0;
        while i < data.len() && data[i].0 == s {
            if data[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(s);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    thresholds.push(f64::NEG_INFINITY);
    points.push((1.0, 1.0));
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1))
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(RocCurve { thresholds, points, auc })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub acc: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub positives: usize,
    pub negatives: usize,
    /// Steps without a score, excluded from every count.
    pub unmeasured: usize,
}

pub fn evaluate(scores: &[Option<f64>], labels: &[bool], threshold: f64) -> Result<(EvalReport, RocCurve)> {
    let curve = roc(scores, labels)?;
    let c = confusion(scores, labels, threshold)?;
    let report = EvalReport {
        auc: curve.auc,
        acc: c.accuracy(),
        threshold,
        confusion: c,
        positives: c.tp + c.fn_,
        negatives: c.fp + c.tn,
        unmeasured: scores.iter().filter(|s| s.is_none_or(f64::is_nan)).count(),
    };
    Ok((report, curve))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub auc: f64,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    /// Sorted by AUC, best first; ties keep input order.
    pub rows: Vec<ConditionRow>,
    pub baseline: Option<String>,
    /// Whether the baseline's AUC is at least every other condition's.
    pub baseline_maximal: Option<bool>,
}

/// Ranks conditions by AUC and checks that `baseline` (typically the
/// lossless run) is not beaten.
pub fn compare_conditions(reports: &[(String, EvalReport)], baseline: Option<&str>) -> ConditionTable {
    let mut rows: Vec<ConditionRow> = reports
        .iter()
        .map(|(name, r)| ConditionRow {
            condition: name.clone(),
            auc: r.auc,
            acc: r.acc,
        })
        .collect();
    rows.sort_by(|a, b| b.auc.total_cmp(&a.auc));
    let baseline_maximal = baseline.and_then(|b| {
        let base = reports.iter().find(|(n, _)| n == b)?;
        Some(reports.iter().all(|(_, r)| base.1.auc >= r.auc))
    });
    ConditionTable {
        rows,
        baseline: baseline.map(str::to_string),
        baseline_maximal,
    }
}

pub fn roc_csv_bytes(curve: &RocCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "fpr", "tpr"])?;
    for (t, (f, p)) in curve.thresholds.iter().zip(&curve.points) {
        w.write_record([t.to_string(), f.to_string(), p.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    write_atomic(path, &roc_csv_bytes(curve)?)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(report)?)
}
