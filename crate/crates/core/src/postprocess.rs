//! Score fusion, Soft-NMS and detection files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_json;
use crate::error::{Error, Result};
use crate::eval::interval_iou;

/// Scored segment in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub start: f64,
    pub end: f64,
    pub label: String,
    pub score: f64,
}

/// `p_cls^α · p_reg^(1−α)`.
pub fn fuse_scores(p_cls: f64, p_reg: f64, alpha: f64) -> f64 {
    p_cls.powf(alpha) * p_reg.powf(1.0 - alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum NmsMethod {
    /// Scales by `1 − IoU` when `IoU > threshold`.
    Linear { threshold: f64 },
    /// Scales by `exp(−IoU²/σ)`.
    Gaussian { sigma: f64 },
}

impl Default for NmsMethod {
    fn default() -> Self {
        NmsMethod::Linear { threshold: 0.84 }
    }
}

impl NmsMethod {
    pub fn decay(&self, iou: f64) -> f64 {
        match *self {
            NmsMethod::Linear { threshold } if iou > threshold => 1.0 - iou,
            NmsMethod::Linear { .. } => 1.0,
            NmsMethod::Gaussian { sigma } => (-iou * iou / sigma).exp(),
        }
    }
}

fn ranks_before(a: &Detection, b: &Detection) -> bool {
    a.score > b.score || (a.score == b.score && (a.start, a.end) < (b.start, b.end))
}

/// Orders by score descending, ties by earlier start then earlier end.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.total_cmp(&b.start))
            .then(a.end.total_cmp(&b.end))
    });
}

/// Soft-NMS keeping the `top_m` best detections, sorted.
///
/// Selection order equals final order: a selected score is the maximum of
/// the remaining ones and later decays only lower them, so the first `top_m`
/// selections are the top `top_m` after exhaustion.
pub fn soft_nms(mut pool: Vec<Detection>, method: NmsMethod, top_m: usize) -> Vec<Detection> {
    let mut kept = Vec::with_capacity(top_m.min(pool.len()));
    while kept.len() < top_m && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if ranks_before(&pool[i], &pool[best]) {
                best = i;
            }
        }
        let chosen = pool.swap_remove(best);
        for d in pool.iter_mut() {
            let iou = interval_iou((chosen.start, chosen.end), (d.start, d.end));
            d.score *= method.decay(iou);
        }
        kept.push(chosen);
    }
    sort_detections(&mut kept);
    kept
}

/// Anchor scores of one window with its mapping to seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScores {
    pub video_id: String,
    pub seconds_offset: f64,
    pub seconds_per_snippet: f64,
    pub duration_seconds: f64,
    /// `(t_s, t_e, p_cls, p_reg)` per anchor.
    pub anchors: Vec<(usize, usize, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostConfig {
    pub alpha: f64,
    pub nms: NmsMethod,
    pub top_m: usize,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            nms: NmsMethod::default(),
            top_m: 100,
        }
    }
}

/// Maps window anchors to seconds, merges windows per video and applies
/// Soft-NMS with top-M per video. Output videos are ordered by id.
pub fn finalize_detections(
    windows: &[WindowScores],
    post: &PostConfig,
    label: &str,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut pools: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for w in windows {
        if !(w.seconds_per_snippet > 0.0 && w.seconds_offset >= 0.0 && w.duration_seconds > 0.0) {
            return Err(Error::Data(format!(
                "{}: inconsistent window timing (offset {}, {} s per snippet, duration {})",
                w.video_id, w.seconds_offset, w.seconds_per_snippet, w.duration_seconds
            )));
        }
        let pool = pools.entry(w.video_id.clone()).or_default();
        for &(s, e, p_cls, p_reg) in &w.anchors {
            let start = w.seconds_offset + s as f64 * w.seconds_per_snippet;
            let end = (w.seconds_offset + e as f64 * w.seconds_per_snippet).min(w.duration_seconds);
            if end <= start {
                continue;
            }
            pool.push(Detection {
                start,
                end,
                label: label.to_string(),
                score: fuse_scores(p_cls, p_reg, post.alpha),
            });
        }
    }
    Ok(pools
        .into_iter()
        .map(|(vid, pool)| (vid, soft_nms(pool, post.nms, post.top_m)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub segment: [f64; 2],
    pub score: f64,
    pub label: String,
}

/// ActivityNet-style submission file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub version: String,
    pub results: BTreeMap<String, Vec<ResultEntry>>,
}

pub const DETECTION_FILE_VERSION: &str = "1.0";

impl DetectionFile {
    pub fn from_detections(dets: &BTreeMap<String, Vec<Detection>>) -> Self {
        Self {
            version: DETECTION_FILE_VERSION.to_string(),
            results: dets
                .iter()
                .map(|(vid, list)| {
                    let entries = list
                        .iter()
                        .map(|d| ResultEntry {
                            segment: [d.start, d.end],
                            score: d.score,
                            label: d.label.clone(),
                        })
                        .collect();
                    (vid.clone(), entries)
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(start: f64, end: f64, score: f64) -> Detection {
        Detection {
            start,
            end,
            label: "a".into(),
            score,
        }
    }

    #[test]
    fn fusion_cases() {
        assert_eq!(fuse_scores(0.3, 0.9, 1.0), 0.3);
        assert!((fuse_scores(0.42, 0.42, 0.37) - 0.42).abs() < 1e-15);
        assert!((fuse_scores(0.64, 0.25, 0.5) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn nms_cases() {
        let m = NmsMethod::default();
        assert_eq!(
            soft_nms(vec![det(1.0, 2.0, 0.7)], m, 100),
            vec![det(1.0, 2.0, 0.7)]
        );
        let disjoint = soft_nms(vec![det(1.0, 2.0, 0.7), det(3.0, 4.0, 0.6)], m, 100);
        assert_eq!(disjoint, vec![det(1.0, 2.0, 0.7), det(3.0, 4.0, 0.6)]);
        let dup = soft_nms(vec![det(1.0, 5.0, 0.8), det(1.0, 5.0, 0.9)], m, 100);
        assert_eq!(dup, vec![det(1.0, 5.0, 0.9), det(1.0, 5.0, 0.0)]);
        assert!(soft_nms(Vec::new(), m, 100).is_empty());
        assert_eq!(
            soft_nms(vec![det(1.0, 2.0, 0.7), det(3.0, 4.0, 0.6)], m, 1).len(),
            1
        );
    }

    #[test]
    fn gaussian_decay() {
        let g = NmsMethod::Gaussian { sigma: 0.4 };
        assert_eq!(g.decay(0.0), 1.0);
        assert!((g.decay(1.0) - (-2.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn mapping_to_seconds() {
        let w = WindowScores {
            video_id: "v".into(),
            seconds_offset: 0.0,
            seconds_per_snippet: 0.5,
            duration_seconds: 50.0,
            anchors: vec![(10, 30, 0.81, 0.81)],
        };
        let out = finalize_detections(&[w.clone()], &PostConfig::default(), "action").unwrap();
        assert_eq!(
            out["v"],
            vec![Detection {
                start: 5.0,
                end: 15.0,
                label: "action".into(),
                score: 0.81
            }]
        );

        let shifted = WindowScores {
            seconds_offset: 4.0,
            anchors: vec![(2, 22, 0.5, 0.5)],
            ..w.clone()
        };
        let out =
            finalize_detections(&[w.clone(), shifted], &PostConfig::default(), "action").unwrap();
        assert_eq!(out["v"].len(), 2);
        assert_eq!(out["v"][0].score, 0.81);
        assert_eq!(out["v"][1].score, 0.0);

        let bad = WindowScores {
            seconds_per_snippet: 0.0,
            ..w
        };
        assert!(matches!(
            finalize_detections(&[bad], &PostConfig::default(), "action"),
            Err(Error::Data(_))
        ));
    }
}
