//! Pixel precision/recall, PxAP and classification accuracy.
//!
//! Counts are pooled over every pixel of every image into one curve. A pixel
//! is predicted foreground when its score is `>= t`. An empty prediction set
//! has precision 1.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Number of points in the threshold sweep `0, 0.001, ..., 1`.
pub const NUM_THRESHOLDS: usize = 1001;

pub fn threshold(i: usize) -> f64 {
    i as f64 / (NUM_THRESHOLDS - 1) as f64
}

pub fn thresholds() -> Vec<f64> {
    (0..NUM_THRESHOLDS).map(threshold).collect()
}

/// A score map and the binary ground truth it is judged against.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

impl EvalPair {
    pub fn new(scores: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if scores.len() != mask.len() {
            return Err(Error::dim(
                "pixels",
                format!("{} scores against {} mask pixels", scores.len(), mask.len()),
            ));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Precondition(format!("score {bad} outside [0, 1]")));
        }
        Ok(EvalPair { scores, mask })
    }

    fn positives(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PxapReport {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Area under the curve in percent.
    pub pxap: f64,
}

impl PxapReport {
    /// `threshold,precision,recall` rows followed by a `# pxap=` summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for ((t, p), r) in self
            .thresholds
            .iter()
            .zip(&self.precision)
            .zip(&self.recall)
        {
            writeln!(out, "{t},{p},{r}").unwrap();
        }
        writeln!(out, "# pxap={}", self.pxap).unwrap();
        out
    }
}

fn total_positives(pairs: &[EvalPair]) -> Result<usize> {
    let pos: usize = pairs.iter().map(EvalPair::positives).sum();
    if pos == 0 {
        return Err(Error::Protocol(
            "no positive ground-truth pixels to evaluate against".into(),
        ));
    }
    Ok(pos)
}

fn precision_recall(tp: usize, fp: usize, positives: usize) -> (f64, f64) {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    (precision, tp as f64 / positives as f64)
}

pub fn pr_at_threshold(pairs: &[EvalPair], t: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Precondition(format!("threshold {t} outside [0, 1]")));
    }
    let positives = total_positives(pairs)?;
    let (mut tp, mut fp) = (0, 0);
    for pair in pairs {
        for (&s, &m) in pair.scores.iter().zip(&pair.mask) {
            if s >= t {
                if m {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    Ok(precision_recall(tp, fp, positives))
}

/// Index of the highest grid threshold not exceeding `s`.
fn grid_bin(s: f64) -> usize {
    let last = NUM_THRESHOLDS - 1;
    let mut k = ((s * last as f64).floor().max(0.0) as usize).min(last);
    while k < last && threshold(k + 1) <= s {
        k += 1;
    }
    while k > 0 && threshold(k) > s {
        k -= 1;
    }
    k
}

/// Pooled PR curve over the fixed grid and its step-wise area
/// `sum_i (R_i - R_{i+1}) * P_i` with `R_{1001} = 0`, in percent.
pub fn pxap(pairs: &[EvalPair]) -> Result<PxapReport> {
    let positives = total_positives(pairs)?;
    let mut hist_pos = vec![0usize; NUM_THRESHOLDS];
    let mut hist_neg = vec![0usize; NUM_THRESHOLDS];
    for pair in pairs {
        for (&s, &m) in pair.scores.iter().zip(&pair.mask) {
            // every score is >= threshold(0) = 0
            let k = grid_bin(s);
            if m {
                hist_pos[k] += 1;
            } else {
                hist_neg[k] += 1;
            }
        }
    }
    let mut precision = vec![0.0; NUM_THRESHOLDS];
    let mut recall = vec![0.0; NUM_THRESHOLDS];
    let (mut tp, mut fp) = (0, 0);
    for i in (0..NUM_THRESHOLDS).rev() {
        tp += hist_pos[i];
        fp += hist_neg[i];
        (precision[i], recall[i]) = precision_recall(tp, fp, positives);
    }
    let mut area = 0.0;
    for i in 0..NUM_THRESHOLDS {
        let next = recall.get(i + 1).copied().unwrap_or(0.0);
        area += (recall[i] - next) * precision[i];
    }
    Ok(PxapReport {
        thresholds: thresholds(),
        precision,
        recall,
        pxap: 100.0 * area,
    })
}

/// Mean of per-image PxAP over images that contain foreground.
pub fn pxap_per_image_mean(pairs: &[EvalPair]) -> Result<f64> {
    let scored: Vec<f64> = pairs
        .iter()
        .filter(|p| p.positives() > 0)
        .map(|p| pxap(std::slice::from_ref(p)).map(|r| r.pxap))
        .collect::<Result<_>>()?;
    if scored.is_empty() {
        return Err(Error::Protocol(
            "no image has positive ground-truth pixels".into(),
        ));
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}

/// Percentage of exact matches.
pub fn classification_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::dim(
            "labels",
            format!("{} predictions for {} labels", preds.len(), labels.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::Precondition("accuracy of an empty list".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}
