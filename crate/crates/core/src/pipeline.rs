//! End-to-end inference and evaluation over datasets.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::{prepare_windows, AnnotationSet, FeatureSequence, InputMode, Window};
use crate::error::Result;
use crate::eval::{
    map_suite, restrict_to_videos, EvalReport, GroundTruth, Prediction, AGNOSTIC_LABEL,
};
use crate::model::Model;
use crate::postprocess::{finalize_detections, DetectionFile, PostConfig, WindowScores};
use crate::tensor::{no_grad, Tensor};

/// Raw anchor scores of one window.
pub fn score_window(model: &Model, window: &Window) -> Result<WindowScores> {
    let plan = model.plan(window.len, window.valid_len)?;
    let mut scores = WindowScores {
        video_id: window.video_id.clone(),
        seconds_offset: window.seconds_offset,
        seconds_per_snippet: window.seconds_per_snippet,
        duration_seconds: window.duration_seconds,
        anchors: Vec::new(),
    };
    if plan.anchors.is_empty() {
        return Ok(scores);
    }
    let features = Tensor::new(&[window.channels, window.len], window.features.clone())?;
    let out = no_grad(|| model.forward(&features, &plan, None))?;
    let (cls, reg) = (out.scores.cls.data(), out.scores.reg.data());
    scores.anchors = plan
        .anchors
        .iter()
        .enumerate()
        .map(|(j, a)| (a.start, a.end, cls[j], reg[j]))
        .collect();
    Ok(scores)
}

/// Scores every window of every sequence.
pub fn score_sequences(
    model: &Model,
    sequences: &[&FeatureSequence],
    mode: InputMode,
) -> Result<Vec<WindowScores>> {
    let none = AnnotationSet::default();
    let mut out = Vec::new();
    for seq in sequences {
        for w in prepare_windows(seq, &none, mode, false)? {
            out.push(score_window(model, &w)?);
        }
    }
    Ok(out)
}

pub fn detections_from_scores(raw: &[WindowScores], post: &PostConfig) -> Result<DetectionFile> {
    Ok(DetectionFile::from_detections(&finalize_detections(
        raw,
        post,
        AGNOSTIC_LABEL,
    )?))
}

/// Ground truth grouped by class, restricted to `subset` when given.
pub fn ground_truth_by_class(
    annotations: &AnnotationSet,
    subset: Option<&str>,
    class_agnostic: bool,
) -> BTreeMap<String, Vec<GroundTruth>> {
    let mut out: BTreeMap<String, Vec<GroundTruth>> = BTreeMap::new();
    for (vid, v) in &annotations.database {
        if subset.is_some_and(|s| s != v.subset) {
            continue;
        }
        for a in &v.annotations {
            let class = if class_agnostic {
                AGNOSTIC_LABEL
            } else {
                a.label.as_str()
            };
            out.entry(class.to_string()).or_default().push(GroundTruth {
                video: vid.clone(),
                segment: (a.segment[0], a.segment[1]),
            });
        }
    }
    out
}

pub fn predictions_by_class(
    detections: &DetectionFile,
    class_agnostic: bool,
) -> BTreeMap<String, Vec<Prediction>> {
    let mut out: BTreeMap<String, Vec<Prediction>> = BTreeMap::new();
    for (vid, list) in &detections.results {
        for r in list {
            let class = if class_agnostic {
                AGNOSTIC_LABEL
            } else {
                r.label.as_str()
            };
            out.entry(class.to_string()).or_default().push(Prediction {
                video: vid.clone(),
                segment: (r.segment[0], r.segment[1]),
                score: r.score,
            });
        }
    }
    out
}

/// mAP report of `detections` against the videos of `subset` (all videos
/// when `None`); predictions for other videos are ignored.
pub fn evaluate(
    detections: &DetectionFile,
    annotations: &AnnotationSet,
    subset: Option<&str>,
    thresholds: &[f64],
    class_agnostic: bool,
) -> EvalReport {
    let videos: BTreeSet<String> = annotations
        .database
        .iter()
        .filter(|(_, v)| subset.is_none_or(|s| s == v.subset))
        .map(|(k, _)| k.clone())
        .collect();
    let preds = restrict_to_videos(&predictions_by_class(detections, class_agnostic), &videos);
    map_suite(
        &preds,
        &ground_truth_by_class(annotations, subset, class_agnostic),
        thresholds,
    )
}

/// Fusion weights tried by [`alpha_search`]: 0.1, 0.2, ..., 0.9.
pub fn alpha_grid() -> Vec<f64> {
    (1..10).map(|i| i as f64 / 10.0).collect()
}

/// Evaluates raw scores at every fusion weight of [`alpha_grid`].
pub fn alpha_search(
    raw: &[WindowScores],
    post: &PostConfig,
    annotations: &AnnotationSet,
    subset: Option<&str>,
    thresholds: &[f64],
    class_agnostic: bool,
) -> Result<Vec<(f64, EvalReport)>> {
    alpha_grid()
        .into_iter()
        .map(|alpha| {
            let det = detections_from_scores(raw, &PostConfig { alpha, ..*post })?;
            Ok((
                alpha,
                evaluate(&det, annotations, subset, thresholds, class_agnostic),
            ))
        })
        .collect()
}
