use serde::{Deserialize, Serialize};

use crate::data::Class;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub t_pos: usize,
    pub t_neg: usize,
    pub f_pos: usize,
    pub f_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.t_pos + self.t_neg + self.f_pos + self.f_neg
    }
}

/// Tallies predictions against truth; `positive` is usually Malignant.
pub fn confusion(predictions: &[Class], truth: &[Class], positive: Class) -> Result<ConfusionCounts> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::Usage(format!(
            "confusion needs equal non-empty vectors, got {} predictions and {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p == positive, t == positive) {
            (true, true) => c.t_pos += 1,
            (false, false) => c.t_neg += 1,
            (true, false) => c.f_pos += 1,
            (false, true) => c.f_neg += 1,
        }
    }
    Ok(c)
}

/// Which ratios had a zero denominator (and were reported as 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: DegenerateFlags,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::Usage("metrics of an empty confusion matrix".into()));
    }
    let (tp, tn, fp, fnn) = (c.t_pos as f64, c.t_neg as f64, c.f_pos as f64, c.f_neg as f64);
    let accuracy = (tp + tn) / (tp + tn + fp + fnn);
    let (precision, dp) = ratio(tp, tp + fp);
    let (recall, dr) = ratio(tp, tp + fnn);
    let (f1, df) = ratio(2.0 * precision * recall, precision + recall);
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate: DegenerateFlags {
            precision: dp,
            recall: dr,
            f1: df,
        },
    })
}

/// Mean of percentages shown to two decimals.
///
/// The mean is taken in exact integer hundredths and the third decimal is
/// dropped, so `(73.75, 81.87, 90.43)` shows as `82.01`.
pub fn mean_accuracy(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Usage("mean of no accuracies".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite accuracy".into()));
    }
    // Inputs are two-decimal figures; work in hundredths to avoid drift.
    let hundredths: Vec<i64> = values.iter().map(|v| (v * 100.0).round() as i64).collect();
    let exact_two_dp = values
        .iter()
        .zip(&hundredths)
        .all(|(v, &h)| (v * 100.0 - h as f64).abs() < 1e-6);
    if exact_two_dp {
        let n = values.len() as i64;
        let sum: i64 = hundredths.iter().sum();
        return Ok(sum.div_euclid(n) as f64 / 100.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(((mean * 100.0) + 1e-9).floor() / 100.0)
}
