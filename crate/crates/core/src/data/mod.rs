//! Dataset ingestion, sequence rescaling and windowing.
//!
//! A dataset is a JSON manifest listing per-video feature files plus an
//! annotation file in the ActivityNet schema. Paths inside the manifest are
//! relative to the manifest's directory.

pub mod format;
pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{read_features, write_features};
pub use synth::{synth_dataset, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub feature_file: PathBuf,
    pub duration_seconds: f64,
    /// Snippets per second.
    pub sampling_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub segment: [f64; 2],
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub duration: f64,
    pub subset: String,
    pub annotations: Vec<SegmentAnnotation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub database: BTreeMap<String, VideoAnnotation>,
}

impl AnnotationSet {
    /// Every segment satisfies `0 ≤ start < end ≤ duration`.
    pub fn validate(&self) -> Result<()> {
        for (vid, v) in &self.database {
            for a in &v.annotations {
                let [s, e] = a.segment;
                if !(0.0 <= s && s < e && e <= v.duration) {
                    return Err(Error::Data(format!(
                        "annotation [{s}, {e}] of {vid} outside duration {}",
                        v.duration
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn segments(&self, video_id: &str) -> &[SegmentAnnotation] {
        self.database
            .get(video_id)
            .map(|v| v.annotations.as_slice())
            .unwrap_or(&[])
    }

    pub fn subset(&self, video_id: &str) -> Option<&str> {
        self.database.get(video_id).map(|v| v.subset.as_str())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: AnnotationSet =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// One video's snippet features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub channels: usize,
    pub len: usize,
    /// `len × channels`, row-major.
    pub features: Vec<f64>,
    pub duration_seconds: f64,
    /// Snippets per second.
    pub sampling_rate: f64,
}

impl FeatureSequence {
    pub fn row(&self, l: usize) -> &[f64] {
        &self.features[l * self.channels..(l + 1) * self.channels]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sequences: Vec<FeatureSequence>,
    pub annotations: AnnotationSet,
}

impl Dataset {
    /// Sequences whose annotation subset equals `subset`.
    pub fn subset(&self, subset: &str) -> Vec<&FeatureSequence> {
        self.sequences
            .iter()
            .filter(|s| self.annotations.subset(&s.video_id) == Some(subset))
            .collect()
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_sequences(manifest: &Path) -> Result<Vec<FeatureSequence>> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|entry| {
            let path = root.join(&entry.feature_file);
            let (channels, len, features) = read_features(&path)?;
            if features.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(&path, "non-finite feature value"));
            }
            if !(entry.duration_seconds > 0.0 && entry.sampling_rate > 0.0) {
                return Err(Error::Data(format!(
                    "{}: duration and sampling rate must be positive",
                    entry.video_id
                )));
            }
            Ok(FeatureSequence {
                video_id: entry.video_id,
                channels,
                len,
                features,
                duration_seconds: entry.duration_seconds,
                sampling_rate: entry.sampling_rate,
            })
        })
        .collect()
}

pub fn load_dataset(manifest: &Path, annotations: &Path) -> Result<Dataset> {
    Ok(Dataset {
        sequences: load_sequences(manifest)?,
        annotations: AnnotationSet::load(annotations)?,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Resamples to exactly `target` snippets by linear interpolation with
/// aligned end points (first and last snippets are kept).
pub fn rescale_sequence(seq: &FeatureSequence, target: usize) -> Result<FeatureSequence> {
    if seq.len == 0 || target == 0 {
        return Err(Error::Data(format!(
            "cannot rescale {} from {} to {target}",
            seq.video_id, seq.len
        )));
    }
    let c = seq.channels;
    let features = if target == seq.len {
        seq.features.clone()
    } else {
        let step = if target > 1 {
            (seq.len - 1) as f64 / (target - 1) as f64
        } else {
            0.0
        };
        let mut out = vec![0.0; target * c];
        for (i, row) in out.chunks_exact_mut(c).enumerate() {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(seq.len - 1);
            let hi = (lo + 1).min(seq.len - 1);
            let frac = pos - lo as f64;
            let (a, b) = (seq.row(lo), seq.row(hi));
            for ch in 0..c {
                row[ch] = if frac == 0.0 {
                    a[ch]
                } else {
                    (1.0 - frac) * a[ch] + frac * b[ch]
                };
            }
        }
        out
    };
    Ok(FeatureSequence {
        video_id: seq.video_id.clone(),
        channels: c,
        len: target,
        features,
        duration_seconds: seq.duration_seconds,
        sampling_rate: target as f64 / seq.duration_seconds,
    })
}

/// How a video is cut into fixed-length model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum InputMode {
    /// Whole video resampled to `len` snippets.
    Rescale { len: usize },
    /// Sliding windows of `len` snippets every `stride`.
    Window { len: usize, stride: usize },
}

impl InputMode {
    pub fn len(&self) -> usize {
        match *self {
            InputMode::Rescale { len } | InputMode::Window { len, .. } => len,
        }
    }
}

/// Fixed-length model input cut from one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub video_id: String,
    pub channels: usize,
    pub len: usize,
    /// Snippets before `valid_len` are real; the rest is zero padding.
    pub valid_len: usize,
    /// `channels × len`, channel-major.
    pub features: Vec<f64>,
    /// Action segments in window snippet coordinates, clipped to the window.
    pub ground_truth: Vec<(f64, f64)>,
    /// Window snippet `i` starts at `seconds_offset + i · seconds_per_snippet`.
    pub seconds_offset: f64,
    pub seconds_per_snippet: f64,
    pub duration_seconds: f64,
}

impl Window {
    pub fn to_seconds(&self, index: f64) -> f64 {
        self.seconds_offset + index * self.seconds_per_snippet
    }
}

/// Window start offsets: multiples of `stride` from 0, keeping a start only
/// when the previous window left snippets uncovered.
pub fn window_starts(raw_len: usize, win: usize, stride: usize) -> Vec<usize> {
    let mut starts = vec![0];
    let mut s = stride;
    while s - stride + win < raw_len {
        starts.push(s);
        s += stride;
    }
    starts
}

fn window_from_rows(
    seq: &FeatureSequence,
    offset: usize,
    win: usize,
    actions: &[(f64, f64)],
    seconds_per_snippet: f64,
) -> Window {
    let c = seq.channels;
    let valid_len = seq.len.saturating_sub(offset).min(win);
    let mut features = vec![0.0; c * win];
    for i in 0..valid_len {
        let row = seq.row(offset + i);
        for ch in 0..c {
            features[ch * win + i] = row[ch];
        }
    }
    let lo = offset as f64;
    let hi = (offset + win) as f64;
    let ground_truth = actions
        .iter()
        .filter(|&&(s, e)| s < hi && e > lo)
        .map(|&(s, e)| (s.max(lo) - lo, e.min(hi) - lo))
        .filter(|(s, e)| e > s)
        .collect();
    Window {
        video_id: seq.video_id.clone(),
        channels: c,
        len: win,
        valid_len,
        features,
        ground_truth,
        seconds_offset: offset as f64 * seconds_per_snippet,
        seconds_per_snippet,
        duration_seconds: seq.duration_seconds,
    }
}

/// Cuts `seq` into windows. `actions` are in snippet coordinates of `seq`;
/// in training mode windows without any action are dropped.
pub fn window_sequence(
    seq: &FeatureSequence,
    win: usize,
    stride: usize,
    training: bool,
    actions: &[(f64, f64)],
) -> Result<Vec<Window>> {
    if !(win > stride && stride > 0) {
        return Err(Error::Config(format!(
            "window length {win} must exceed stride {stride} > 0"
        )));
    }
    let sps = 1.0 / seq.sampling_rate;
    Ok(window_starts(seq.len, win, stride)
        .into_iter()
        .map(|s| window_from_rows(seq, s, win, actions, sps))
        .filter(|w| !training || !w.ground_truth.is_empty())
        .collect())
}

/// Model inputs for one video under `mode`, with its annotated actions.
pub fn prepare_windows(
    seq: &FeatureSequence,
    annotations: &AnnotationSet,
    mode: InputMode,
    training: bool,
) -> Result<Vec<Window>> {
    let seconds = annotations.segments(&seq.video_id);
    match mode {
        InputMode::Rescale { len } => {
            let rescaled = rescale_sequence(seq, len)?;
            let scale = len as f64 / seq.duration_seconds;
            let actions: Vec<(f64, f64)> = seconds
                .iter()
                .map(|a| (a.segment[0] * scale, a.segment[1] * scale))
                .collect();
            let w = window_from_rows(&rescaled, 0, len, &actions, 1.0 / scale);
            Ok(if training && w.ground_truth.is_empty() {
                Vec::new()
            } else {
                vec![w]
            })
        }
        InputMode::Window { len, stride } => {
            let actions: Vec<(f64, f64)> = seconds
                .iter()
                .map(|a| {
                    (
                        a.segment[0] * seq.sampling_rate,
                        a.segment[1] * seq.sampling_rate,
                    )
                })
                .collect();
            window_sequence(seq, len, stride, training, &actions)
        }
    }
}
