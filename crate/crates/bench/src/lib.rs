//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snippetgraph_core::data::prepare_windows;
use snippetgraph_core::data::synth::{annotations_of, generate, SynthConfig};
use snippetgraph_core::train::{prepare_samples, TrainSample};
use snippetgraph_core::{Detection, Model, ModelConfig, Tensor};

pub fn features(channels: usize, len: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels * len)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(&[channels, len], data).unwrap()
}

/// The synthetic-preset model with training windows from `videos` generated videos.
pub fn training_fixture(videos: usize, seed: u64) -> (Model, Vec<TrainSample>) {
    let cfg = SynthConfig {
        videos,
        seed,
        ..SynthConfig::default()
    };
    let generated = generate(&cfg).unwrap();
    let annotations = annotations_of(&generated);
    let model = Model::init(ModelConfig::synthetic(cfg.channels), seed).unwrap();
    let windows: Vec<_> = generated
        .iter()
        .flat_map(|v| {
            prepare_windows(&v.sequence, &annotations, model.config.input_mode, true).unwrap()
        })
        .collect();
    let samples = prepare_samples(&model, &windows).unwrap();
    (model, samples)
}

/// Random detections over a 100 s video.
pub fn detection_pool(n: usize, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let start = rng.random_range(0.0..90.0);
            Detection {
                start,
                end: start + rng.random_range(0.5..10.0),
                label: "action".into(),
                score: rng.random_range(0.0..1.0),
            }
        })
        .collect()
}
