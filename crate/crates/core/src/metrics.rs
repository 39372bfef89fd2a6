//! Evaluation metrics. Percentages are on a 0–100 scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::{tiou, Interval, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub acc50: f64,
    pub acc70: f64,
    pub oos_accuracy: f64,
    pub oos_f1: f64,
    pub r_at: BTreeMap<usize, f64>,
}

/// Share of predictions whose tIoU with ground truth is strictly above `threshold`.
pub fn acc_at(results: &[(Interval, Interval)], threshold: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput("acc_at"));
    }
    let hits = results.iter().filter(|(p, g)| tiou(*p, *g) > threshold).count();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// OOS is the positive class. Pairs are `(predicted, label)`.
    pub fn from_pairs(pairs: &[(Verdict, Verdict)]) -> Self {
        let mut c = Confusion::default();
        for (pred, label) in pairs {
            match (pred, label) {
                (Verdict::Oos, Verdict::Oos) => c.tp += 1,
                (Verdict::Oos, Verdict::Match) => c.fp += 1,
                (Verdict::Match, Verdict::Match) => c.tn += 1,
                (Verdict::Match, Verdict::Oos) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        100.0 * (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }

    /// F1 of the OOS class. With no positives predicted or present it is 100.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            return 100.0;
        }
        100.0 * (2 * self.tp) as f64 / denom as f64
    }
}

/// `(accuracy, f1)` of OOS decisions given `(predicted, label)` pairs.
pub fn oos_metrics(decisions: &[(Verdict, Verdict)]) -> Result<(f64, f64)> {
    if decisions.is_empty() {
        return Err(Error::EmptyInput("oos_metrics"));
    }
    let c = Confusion::from_pairs(decisions);
    Ok((c.accuracy(), c.f1()))
}

/// Share of queries whose true video appears among the first `k` ranked ids.
pub fn recall_at_k(rankings: &[Vec<String>], truth: &[String], k: usize) -> Result<f64> {
    if rankings.is_empty() || rankings.len() != truth.len() {
        return Err(Error::EmptyInput("recall_at_k"));
    }
    let hits = rankings
        .iter()
        .zip(truth)
        .filter(|(ranked, t)| ranked.iter().take(k).any(|id| id == *t))
        .count();
    Ok(100.0 * hits as f64 / rankings.len() as f64)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
