//! Synthetic datasets with planted actions.
//!
//! Background snippets are pure noise. Each action occupies a run of
//! snippets whose features are noise plus a per-class signature vector.
//! Actions never touch: at least one background snippet separates them, and
//! none starts at snippet 0 or ends past snippet `len − 1`, so every action
//! is exactly representable as an anchor.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::format::write_features;
use super::{
    write_json, AnnotationSet, FeatureSequence, ManifestEntry, SegmentAnnotation, VideoAnnotation,
};
use crate::error::{Error, Result};

const PLACEMENT_RETRIES: usize = 1000;
const RESTART_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub videos: usize,
    pub len: usize,
    pub channels: usize,
    pub classes: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub min_action_len: usize,
    pub max_action_len: usize,
    pub noise: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    /// Every `validation_every`-th video goes to the validation subset.
    pub validation_every: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 200,
            len: 100,
            channels: 32,
            classes: 4,
            min_actions: 1,
            max_actions: 3,
            min_action_len: 8,
            max_action_len: 40,
            noise: 0.5,
            min_duration: 30.0,
            max_duration: 150.0,
            validation_every: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.len < 4 || self.channels == 0 || self.classes == 0 {
            return bad("synthetic length must be at least 4 with nonzero channels and classes");
        }
        if self.min_actions > self.max_actions {
            return bad("min_actions exceeds max_actions");
        }
        if self.min_action_len == 0 || self.min_action_len > self.max_action_len {
            return bad("action lengths must satisfy 0 < min <= max");
        }
        if self.min_action_len + 2 > self.len {
            return bad("actions must be shorter than the sequence");
        }
        if !(self.noise >= 0.0 && self.min_duration > 0.0 && self.min_duration <= self.max_duration)
        {
            return bad("noise must be nonnegative and durations positive and ordered");
        }
        Ok(())
    }
}

/// A planted action in snippet indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedAction {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub sequence: FeatureSequence,
    pub actions: Vec<PlantedAction>,
    pub subset: &'static str,
}

fn place_actions<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> Result<Vec<PlantedAction>> {
    let count = rng.random_range(cfg.min_actions..=cfg.max_actions);
    let max_len = cfg.max_action_len.min(cfg.len - 2);
    let mut placed: Vec<PlantedAction> = Vec::with_capacity(count);
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > PLACEMENT_RETRIES {
            return Err(Error::Data(format!(
                "could not place {count} non-overlapping actions in {} snippets",
                cfg.len
            )));
        }
        let length = rng.random_range(cfg.min_action_len..=max_len);
        let start = rng.random_range(1..=cfg.len - 1 - length);
        let end = start + length;
        if placed.iter().all(|a| end < a.start || start > a.end) {
            let class = rng.random_range(0..cfg.classes);
            placed.push(PlantedAction { start, end, class });
        } else if attempts % RESTART_EVERY == 0 {
            placed.clear();
        }
    }
    placed.sort_by_key(|a| a.start);
    Ok(placed)
}

/// Generates the dataset in memory.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthVideo>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let signatures: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            (0..cfg.channels)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut videos = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        let actions = place_actions(&mut rng, cfg)?;
        let duration = rng.random_range(cfg.min_duration..=cfg.max_duration);
        let mut features: Vec<f64> = (0..cfg.len * cfg.channels)
            .map(|_| noise.sample(&mut rng))
            .collect();
        for a in &actions {
            for l in a.start..a.end {
                let row = &mut features[l * cfg.channels..(l + 1) * cfg.channels];
                for (x, s) in row.iter_mut().zip(&signatures[a.class]) {
                    *x += s;
                }
            }
        }
        let validation =
            cfg.validation_every > 0 && v % cfg.validation_every == cfg.validation_every - 1;
        videos.push(SynthVideo {
            sequence: FeatureSequence {
                video_id: format!("video_{v:04}"),
                channels: cfg.channels,
                len: cfg.len,
                features,
                duration_seconds: duration,
                sampling_rate: cfg.len as f64 / duration,
            },
            actions,
            subset: if validation { "validation" } else { "training" },
        });
    }
    Ok(videos)
}

pub fn class_label(class: usize) -> String {
    format!("class_{class}")
}

/// Annotations in seconds for generated videos.
pub fn annotations_of(videos: &[SynthVideo]) -> AnnotationSet {
    let mut database = BTreeMap::new();
    for v in videos {
        let s = &v.sequence;
        let per = s.duration_seconds / s.len as f64;
        database.insert(
            s.video_id.clone(),
            VideoAnnotation {
                duration: s.duration_seconds,
                subset: v.subset.to_string(),
                annotations: v
                    .actions
                    .iter()
                    .map(|a| SegmentAnnotation {
                        segment: [
                            a.start as f64 * per,
                            (a.end as f64 * per).min(s.duration_seconds),
                        ],
                        label: class_label(a.class),
                    })
                    .collect(),
            },
        );
    }
    AnnotationSet { database }
}

/// Paths of a dataset written by [`synth_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub manifest: PathBuf,
    pub annotations: PathBuf,
}

/// Writes `manifest.json`, `annotations.json` and `features/*.bin` under `dir`.
pub fn synth_dataset(cfg: &SynthConfig, dir: &Path) -> Result<SynthPaths> {
    let videos = generate(cfg)?;
    let features_dir = dir.join("features");
    std::fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    let mut manifest = Vec::with_capacity(videos.len());
    for v in &videos {
        let s = &v.sequence;
        let rel = PathBuf::from("features").join(format!("{}.bin", s.video_id));
        write_features(&dir.join(&rel), s.channels, s.len, &s.features)?;
        manifest.push(ManifestEntry {
            video_id: s.video_id.clone(),
            feature_file: rel,
            duration_seconds: s.duration_seconds,
            sampling_rate: s.sampling_rate,
        });
    }
    let paths = SynthPaths {
        manifest: dir.join("manifest.json"),
        annotations: dir.join("annotations.json"),
    };
    write_json(&paths.manifest, &manifest)?;
    annotations_of(&videos).save(&paths.annotations)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, noise: f64) -> SynthConfig {
        SynthConfig {
            videos: 6,
            len: 60,
            channels: 4,
            noise,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_actions_equal_signature() {
        let videos = generate(&small(1, 0.0)).unwrap();
        for v in &videos {
            let s = &v.sequence;
            for l in 0..s.len {
                let inside = v.actions.iter().find(|a| (a.start..a.end).contains(&l));
                match inside {
                    Some(a) => {
                        let first = videos
                            .iter()
                            .flat_map(|w| w.actions.iter().map(move |b| (w, b)))
                            .find(|(_, b)| b.class == a.class)
                            .map(|(w, b)| w.sequence.row(b.start).to_vec())
                            .unwrap();
                        assert_eq!(s.row(l), first.as_slice());
                    }
                    None => assert!(s.row(l).iter().all(|&x| x == 0.0)),
                }
            }
        }
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = generate(&small(7, 0.5)).unwrap();
        let b = generate(&small(7, 0.5)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sequence, y.sequence);
            assert_eq!(x.actions, y.actions);
        }
    }

    #[test]
    fn actions_are_separated_and_inside() {
        for v in generate(&small(3, 0.1)).unwrap() {
            for a in &v.actions {
                assert!(a.start >= 1 && a.end <= v.sequence.len - 1 && a.start < a.end);
            }
            for w in v.actions.windows(2) {
                assert!(w[0].end < w[1].start);
            }
        }
    }

    #[test]
    fn impossible_placement_errors() {
        let cfg = SynthConfig {
            len: 12,
            min_actions: 3,
            max_actions: 3,
            min_action_len: 8,
            max_action_len: 8,
            ..small(0, 0.1)
        };
        assert!(matches!(generate(&cfg), Err(Error::Data(_))));
    }
}
