//! Detection and ranking metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl DetectionOutcome {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &DetectionOutcome) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when the metric's denominator was zero and it was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn detection_metrics(o: &DetectionOutcome) -> DetectionMetrics {
    let (accuracy, _) = ratio(o.tp + o.tn, o.total());
    let (precision, precision_undefined) = ratio(o.tp, o.tp + o.fp);
    let (recall, recall_undefined) = ratio(o.tp, o.tp + o.fn_);
    let (f1, f1_undefined) =
        if precision + recall > 0.0 { (2.0 * precision * recall / (precision + recall), false) } else { (0.0, true) };
    DetectionMetrics { accuracy, precision, recall, f1, precision_undefined, recall_undefined, f1_undefined }
}

/// Fault classes of one truly faulty host, nearest prototype first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub host: usize,
    pub interval: u64,
    pub ranking: Vec<usize>,
    pub truth: u8,
}

impl RankedPrediction {
    /// 1-based rank of the true class, if present.
    pub fn rank(&self) -> Option<usize> {
        self.ranking.iter().position(|&c| c == self.truth as usize).map(|p| p + 1)
    }
}

/// Fraction of predictions whose true class is within the top `k`.
/// `None` for an empty set.
pub fn hit_rate(preds: &[RankedPrediction], k: usize) -> Option<f64> {
    if preds.is_empty() {
        return None;
    }
    let hits = preds.iter().filter(|p| p.rank().is_some_and(|r| r <= k)).count();
    Some(hits as f64 / preds.len() as f64)
}

/// Mean of `1 / log2(r + 1)` over the true-class ranks; a class missing from
/// the ranking contributes 0.
pub fn ndcg(preds: &[RankedPrediction]) -> Option<f64> {
    if preds.is_empty() {
        return None;
    }
    let total: f64 = preds.iter().map(|p| p.rank().map_or(0.0, |r| 1.0 / ((r + 1) as f64).log2())).sum();
    Some(total / preds.len() as f64)
}

/// The six reported numbers. Ranking metrics are `null` when the split has
/// no faulty hosts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hr: Option<f64>,
    pub ndcg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub intervals: u64,
    pub host_rows: u64,
    pub faulty: u64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Metrics,
    pub counts: Counts,
    pub hr_k: usize,
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn build(outcome: &DetectionOutcome, ranked: &[RankedPrediction], intervals: u64, hr_k: usize) -> Self {
        let d = detection_metrics(outcome);
        let mut undefined = Vec::new();
        if d.precision_undefined {
            undefined.push("precision".to_string());
        }
        if d.recall_undefined {
            undefined.push("recall".to_string());
        }
        if d.f1_undefined {
            undefined.push("f1".to_string());
        }
        let hr = hit_rate(ranked, hr_k);
        if hr.is_none() {
            undefined.extend(["hr".to_string(), "ndcg".to_string()]);
        }
        MetricsReport {
            metrics: Metrics {
                accuracy: d.accuracy,
                precision: d.precision,
                recall: d.recall,
                f1: d.f1,
                hr,
                ndcg: ndcg(ranked),
            },
            counts: Counts {
                intervals,
                host_rows: outcome.total(),
                faulty: ranked.len() as u64,
                tp: outcome.tp,
                fp: outcome.fp,
                tn: outcome.tn,
                fn_: outcome.fn_,
            },
            hr_k,
            undefined,
        }
    }
}
