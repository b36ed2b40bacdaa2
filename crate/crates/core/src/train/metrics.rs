use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// A sample is predicted positive when its probability is at least `threshold`.
    pub fn from_probabilities(probs: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} scores for {} labels",
                probs.len(),
                labels.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `2tp / (2tp + fp + fn)`, or 0 when nothing is positive.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    /// `tp / (tp + fp + fn)`, or 1 when nothing is positive.
    pub fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            self.tp as f64 / den as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic: the share of
/// (positive, negative) pairs ranked correctly, ties counting ½. Uses average ranks.
/// Returns 0.5 when either class is absent.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(0.5);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives keeps tied (half-integer) ranks exact.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average, (i + j + 2) / 2.
        let twice_avg = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_avg * tied_pos;
        i = j + 1;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub f1: f64,
    pub auc_roc: f64,
    pub iou: f64,
    pub accuracy: f64,
    pub counts: ConfusionCounts,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn from_probabilities(probs: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty set"));
        }
        let counts = ConfusionCounts::from_probabilities(probs, labels, threshold)?;
        Ok(MetricsReport {
            f1: counts.f1(),
            auc_roc: auc_roc(probs, labels)?,
            iou: counts.iou(),
            accuracy: counts.accuracy(),
            counts,
            threshold,
        })
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.counts;
        let _ = writeln!(s, "f1={}", self.f1);
        let _ = writeln!(s, "auc_roc={}", self.auc_roc);
        let _ = writeln!(s, "iou={}", self.iou);
        let _ = writeln!(s, "accuracy={}", self.accuracy);
        let _ = writeln!(s, "tp={}", c.tp);
        let _ = writeln!(s, "fp={}", c.fp);
        let _ = writeln!(s, "tn={}", c.tn);
        let _ = writeln!(s, "fn={}", c.fn_);
        let _ = writeln!(s, "threshold={}", self.threshold);
        s
    }
}
