//! Metrics: average precision, clip and per-frame mAP, accuracy, speed error.
//!
//! AP is non-interpolated: examples are ranked by descending score with ties
//! broken by stable example order, and AP is the mean of precision@k over
//! the ranks of the positive examples. Classes with no positive example are
//! undefined and excluded from the mean.

use serde::Serialize;

use crate::{Error, Result};

/// Per-example (or per-frame) scores and matching binary labels for one or
/// more classes, in stable example order.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    /// scores[i][c] — score of example i for class c.
    pub scores: Vec<Vec<f64>>,
    /// labels[i][c] — ground truth of example i for class c.
    pub labels: Vec<Vec<bool>>,
}

impl PredictionSet {
    pub fn push(&mut self, scores: Vec<f64>, labels: Vec<bool>) {
        debug_assert_eq!(scores.len(), labels.len());
        self.scores.push(scores);
        self.labels.push(labels);
    }

    pub fn extend(&mut self, other: PredictionSet) {
        self.scores.extend(other.scores);
        self.labels.extend(other.labels);
    }

    pub fn num_classes(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }
}

/// Non-interpolated average precision of one ranking. Returns None when
/// there are no positive labels (undefined).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort: ties keep example-id order
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct MapReport {
    /// AP per class; None where the class has no positives.
    pub per_class: Vec<Option<f64>>,
    /// Mean over defined classes.
    pub map: f64,
}

/// Mean average precision over classes, skipping classes with no positives.
pub fn clip_map(preds: &PredictionSet) -> Result<MapReport> {
    let c = preds.num_classes();
    if c == 0 {
        return Err(Error::Eval("empty prediction set".into()));
    }
    let mut per_class = Vec::with_capacity(c);
    for class in 0..c {
        let scores: Vec<f64> = preds.scores.iter().map(|s| s[class]).collect();
        let labels: Vec<bool> = preds.labels.iter().map(|l| l[class]).collect();
        per_class.push(average_precision(&scores, &labels));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Eval("no class has a positive example".into()));
    }
    Ok(MapReport {
        map: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
    })
}

/// Per-frame mAP: identical to [`clip_map`] on the pooled frame population
/// of all videos (the caller concatenates frames into one PredictionSet).
pub fn per_frame_map(preds: &PredictionSet) -> Result<MapReport> {
    clip_map(preds)
}

/// Exact-match fraction.
pub fn accuracy(pred_classes: &[usize], true_classes: &[usize]) -> Result<f64> {
    if pred_classes.is_empty() || pred_classes.len() != true_classes.len() {
        return Err(Error::Eval(format!(
            "accuracy needs equal non-empty inputs, got {} and {}",
            pred_classes.len(),
            true_classes.len()
        )));
    }
    let correct = pred_classes
        .iter()
        .zip(true_classes)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / pred_classes.len() as f64)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpeedError {
    pub mae: f64,
    pub rmse: f64,
}

/// Mean-absolute and root-mean-squared regression error, both reported.
pub fn speed_error(preds: &[f64], targets: &[f64]) -> Result<SpeedError> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Eval(format!(
            "speed_error needs equal non-empty inputs, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        let r = p - t;
        abs += r.abs();
        sq += r * r;
    }
    Ok(SpeedError {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    })
}
