//! Temporal IoU, average precision and mAP over threshold sets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label used by class-agnostic evaluation.
pub const AGNOSTIC_LABEL: &str = "action";

/// IoU of two intervals; 0 when either is degenerate or they are disjoint.
pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn segment_iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for s in [a, b] {
        if !(s.0 < s.1) {
            return Err(Error::Contract(format!(
                "degenerate segment [{}, {}]",
                s.0, s.1
            )));
        }
    }
    Ok(interval_iou(a, b))
}

/// ActivityNet thresholds 0.5, 0.55, ..., 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video: String,
    pub segment: (f64, f64),
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video: String,
    pub segment: (f64, f64),
}

/// Flags each prediction (in descending score order, ties by input order)
/// as a true positive under greedy matching.
pub fn match_predictions(
    predictions: &[Prediction],
    ground_truth: &[GroundTruth],
    threshold: f64,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));
    let mut taken = vec![false; ground_truth.len()];
    order
        .iter()
        .map(|&p| {
            let pred = &predictions[p];
            let mut best: Option<(f64, usize)> = None;
            for (g, gt) in ground_truth.iter().enumerate() {
                if taken[g] || gt.video != pred.video {
                    continue;
                }
                let iou = interval_iou(pred.segment, gt.segment);
                if iou >= threshold && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, g));
                }
            }
            match best {
                Some((_, g)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Area under the interpolated precision-recall curve, given true-positive
/// flags in rank order.
pub fn ap_from_flags(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let hits = flags
        .iter()
        .zip(&precision)
        .filter(|(f, _)| **f)
        .fold(0.0, |acc, (_, p)| acc + p);
    hits / num_gt as f64
}

pub fn average_precision(
    predictions: &[Prediction],
    ground_truth: &[GroundTruth],
    threshold: f64,
) -> f64 {
    ap_from_flags(
        &match_predictions(predictions, ground_truth, threshold),
        ground_truth.len(),
    )
}

/// Keeps predictions whose video is in `videos`.
pub fn restrict_to_videos(
    predictions: &BTreeMap<String, Vec<Prediction>>,
    videos: &BTreeSet<String>,
) -> BTreeMap<String, Vec<Prediction>> {
    predictions
        .iter()
        .map(|(class, list)| {
            let kept = list
                .iter()
                .filter(|p| videos.contains(&p.video))
                .cloned()
                .collect();
            (class.clone(), kept)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// mAP per threshold, aligned with `thresholds`.
    pub map: Vec<f64>,
    pub average_map: f64,
    /// Class → AP per threshold.
    pub per_class: BTreeMap<String, Vec<f64>>,
    pub num_predictions: usize,
    pub num_ground_truth: usize,
    /// Set when there was no ground truth to evaluate against.
    pub empty_ground_truth: bool,
}

impl EvalReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-9)
            .map(|i| self.map[i])
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12}", "tIoU"));
        for t in &self.thresholds {
            out.push_str(&format!("{t:>8.2}"));
        }
        out.push_str(&format!("{:>9}\n", "avg"));
        out.push_str(&format!("{:<12}", "mAP"));
        for m in &self.map {
            out.push_str(&format!("{m:>8.4}"));
        }
        out.push_str(&format!("{:>9.4}\n", self.average_map));
        for (class, aps) in &self.per_class {
            let name: String = class.chars().take(11).collect();
            out.push_str(&format!("{name:<12}"));
            for a in aps {
                out.push_str(&format!("{a:>8.4}"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "predictions {}  ground truth {}\n",
            self.num_predictions, self.num_ground_truth
        ));
        out
    }
}

/// mAP over classes at every threshold. Classes come from the ground truth;
/// predicted classes without ground truth are ignored.
pub fn map_suite(
    predictions: &BTreeMap<String, Vec<Prediction>>,
    ground_truth: &BTreeMap<String, Vec<GroundTruth>>,
    thresholds: &[f64],
) -> EvalReport {
    let classes: Vec<&String> = ground_truth
        .iter()
        .filter(|(_, g)| !g.is_empty())
        .map(|(c, _)| c)
        .collect();
    let mut per_class = BTreeMap::new();
    for class in &classes {
        let preds = predictions.get(*class).map(Vec::as_slice).unwrap_or(&[]);
        let gts = &ground_truth[*class];
        let aps = thresholds
            .iter()
            .map(|&t| average_precision(preds, gts, t))
            .collect();
        per_class.insert((*class).clone(), aps);
    }
    let map: Vec<f64> = (0..thresholds.len())
        .map(|i| {
            if classes.is_empty() {
                0.0
            } else {
                per_class.values().fold(0.0, |acc, a: &Vec<f64>| acc + a[i]) / classes.len() as f64
            }
        })
        .collect();
    let average_map = if map.is_empty() {
        0.0
    } else {
        map.iter().fold(0.0, |acc, m| acc + m) / map.len() as f64
    };
    EvalReport {
        thresholds: thresholds.to_vec(),
        map,
        average_map,
        per_class,
        num_predictions: predictions.values().map(Vec::len).sum(),
        num_ground_truth: ground_truth.values().map(Vec::len).sum(),
        empty_ground_truth: classes.is_empty(),
    }
}
