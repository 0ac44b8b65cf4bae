//! `snippetgraph`: synthetic data, training, inference, evaluation and graph
//! export for sub-graph temporal action detection.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numeric failure.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{pick, require, FileConfig};
use snippetgraph_core::data::{
    load_dataset, load_sequences, prepare_windows, synth_dataset, SynthConfig,
};
use snippetgraph_core::eval::default_thresholds;
use snippetgraph_core::model::features_tensor;
use snippetgraph_core::pipeline::{
    alpha_search, detections_from_scores, evaluate, score_sequences,
};
use snippetgraph_core::postprocess::WindowScores;
use snippetgraph_core::train::{prepare_samples, train};
use snippetgraph_core::{
    AnnotationSet, DetectionFile, Error, FeatureSequence, InputMode, Model, ModelConfig, NmsMethod,
    PostConfig, Result, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "snippetgraph",
    version,
    about = "Sub-graph temporal action detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with planted actions.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score videos with a checkpoint and write detections.
    Infer(InferArgs),
    /// Compute mAP of detections against annotations.
    Eval(EvalArgs),
    /// Write the per-block semantic edges of one video.
    ExportGraph(ExportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    videos: usize,
    /// Snippets per video.
    #[arg(long, default_value_t = 100)]
    len: usize,
    /// Raw feature channels.
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 1)]
    min_actions: usize,
    #[arg(long, default_value_t = 3)]
    max_actions: usize,
    /// Standard deviation of the background noise.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Model preset: synthetic or activitynet.
    #[arg(long)]
    preset: Option<String>,
    /// Internal channel width.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    cardinality: Option<usize>,
    /// Number of GCNeXt blocks.
    #[arg(long)]
    blocks: Option<usize>,
    /// Semantic neighbours per snippet; 0 disables the semantic graph.
    #[arg(long)]
    k_neighbors: Option<usize>,
    /// Temporal alignment resolution.
    #[arg(long)]
    tau1: Option<usize>,
    /// Semantic alignment resolution.
    #[arg(long)]
    tau2: Option<usize>,
    /// Anchors are shorter than this many snippets.
    #[arg(long)]
    max_duration: Option<usize>,
    /// Resample every video to this many snippets.
    #[arg(long, conflicts_with = "window_len")]
    rescale_len: Option<usize>,
    /// Cut videos into sliding windows of this many snippets.
    #[arg(long)]
    window_len: Option<usize>,
    /// Window stride; defaults to half the window.
    #[arg(long, requires = "window_len")]
    stride: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Line-delimited JSON metrics log.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Annotation subset to train on ("all" for every video).
    #[arg(long)]
    subset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total epochs; the learning rate drops after the first half.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate of the first half.
    #[arg(long)]
    lr: Option<f64>,
    /// Factor applied to the learning rate for the second half.
    #[arg(long)]
    lr_drop: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda_reg: Option<f64>,
    #[arg(long)]
    lambda_l2: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum NmsKind {
    Linear,
    Gaussian,
}

#[derive(Args, Debug, Default)]
struct PostArgs {
    /// Weight of the classification score in score fusion.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    nms_method: Option<NmsKind>,
    /// IoU threshold of linear Soft-NMS.
    #[arg(long)]
    nms_threshold: Option<f64>,
    /// Width of Gaussian Soft-NMS.
    #[arg(long)]
    nms_sigma: Option<f64>,
    /// Detections kept per video.
    #[arg(long)]
    top_m: Option<usize>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Detection JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Annotations used to select --subset.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Only score videos of this annotation subset.
    #[arg(long, requires = "annotations")]
    subset: Option<String>,
    /// Also write unfused per-anchor scores (input of `eval --alpha-grid`).
    #[arg(long)]
    raw_scores: Option<PathBuf>,
    #[command(flatten)]
    post: PostArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Detection JSON to evaluate.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Only evaluate videos of this annotation subset.
    #[arg(long)]
    subset: Option<String>,
    /// Treat every label as one class.
    #[arg(long)]
    class_agnostic: bool,
    /// Comma-separated tIoU thresholds (default 0.5:0.05:0.95).
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Report JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Search the fusion weight over 0.1..0.9 using raw scores from `infer`.
    #[arg(long, requires = "raw_scores")]
    alpha_grid: bool,
    #[arg(long)]
    raw_scores: Option<PathBuf>,
    #[command(flatten)]
    post: PostArgs,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    video: String,
    /// Trained weights; a seeded initialization is used without one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Graph JSON to write; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a Graphviz rendering.
    #[arg(long)]
    dot: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_)
        | Error::Format { .. }
        | Error::Io { .. }
        | Error::Json(_)
        | Error::EmptyGraph => 2,
        Error::Numeric(_) | Error::Contract(_) | Error::Dimension { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::ExportGraph(a) => run_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                eprintln!("run `snippetgraph --help` for usage");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        videos: a.videos,
        len: a.len,
        channels: a.channels,
        classes: a.classes,
        min_actions: a.min_actions,
        max_actions: a.max_actions,
        noise: a.noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let paths = synth_dataset(&cfg, &a.out)?;
    println!("manifest {}", paths.manifest.display());
    println!("annotations {}", paths.annotations.display());
    Ok(())
}

fn raw_channels(sequences: &[&FeatureSequence]) -> Result<usize> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::Data("dataset has no videos".into()))?;
    if let Some(s) = sequences.iter().find(|s| s.channels != first.channels) {
        return Err(Error::Data(format!(
            "{} has {} channels, {} has {}",
            s.video_id, s.channels, first.video_id, first.channels
        )));
    }
    Ok(first.channels)
}

fn model_config(m: &ModelArgs, file: &FileConfig, raw: usize) -> Result<ModelConfig> {
    let preset = pick(&m.preset, &file.preset).unwrap_or_else(|| "synthetic".into());
    let base = ModelConfig::preset(&preset, raw)?;
    let window = pick(&m.window_len, &file.window_len);
    let input_mode = match window {
        Some(len) => InputMode::Window {
            len,
            stride: pick(&m.stride, &file.stride).unwrap_or(len / 2),
        },
        None => InputMode::Rescale {
            len: pick(&m.rescale_len, &file.rescale_len).unwrap_or(base.input_mode.len()),
        },
    };
    let cfg = ModelConfig {
        width: pick(&m.width, &file.width).unwrap_or(base.width),
        cardinality: pick(&m.cardinality, &file.cardinality).unwrap_or(base.cardinality),
        blocks: pick(&m.blocks, &file.blocks).unwrap_or(base.blocks),
        k_neighbors: pick(&m.k_neighbors, &file.k_neighbors).unwrap_or(base.k_neighbors),
        tau_temporal: pick(&m.tau1, &file.tau1).unwrap_or(base.tau_temporal),
        tau_semantic: pick(&m.tau2, &file.tau2).unwrap_or(base.tau_semantic),
        max_duration: pick(&m.max_duration, &file.max_duration).unwrap_or(base.max_duration),
        hidden: file.hidden.unwrap_or(base.hidden),
        input_mode,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

fn post_config(p: &PostArgs, file: &FileConfig) -> Result<PostConfig> {
    let d = PostConfig::default();
    let method = match (p.nms_method, file.nms_method.as_deref()) {
        (Some(k), _) => k,
        (None, Some("linear")) | (None, None) => NmsKind::Linear,
        (None, Some("gaussian")) => NmsKind::Gaussian,
        (None, Some(other)) => return Err(Error::Config(format!("unknown nms_method {other:?}"))),
    };
    let nms = match method {
        NmsKind::Linear => NmsMethod::Linear {
            threshold: pick(&p.nms_threshold, &file.nms_threshold).unwrap_or(0.84),
        },
        NmsKind::Gaussian => NmsMethod::Gaussian {
            sigma: pick(&p.nms_sigma, &file.nms_sigma).unwrap_or(0.4),
        },
    };
    let alpha = pick(&p.alpha, &file.alpha).unwrap_or(d.alpha);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(PostConfig {
        alpha,
        nms,
        top_m: pick(&p.top_m, &file.top_m).unwrap_or(d.top_m),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn select<'a>(
    sequences: &'a [FeatureSequence],
    annotations: &AnnotationSet,
    subset: Option<&str>,
) -> Vec<&'a FeatureSequence> {
    sequences
        .iter()
        .filter(|s| match subset {
            None | Some("all") => true,
            Some(name) => annotations.subset(&s.video_id) == Some(name),
        })
        .collect()
}

fn run_train(a: TrainArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let manifest = require(&a.manifest, &file.manifest, "manifest")?;
    let annotations = require(&a.annotations, &file.annotations, "annotations")?;
    let out = require(&a.out, &file.out, "out")?;
    let subset = pick(&a.subset, &file.subset).unwrap_or_else(|| "training".into());
    let seed = pick(&a.seed, &file.seed).unwrap_or(0);

    let dataset = load_dataset(&manifest, &annotations)?;
    let chosen = select(&dataset.sequences, &dataset.annotations, Some(&subset));
    let cfg = model_config(&a.model, &file, raw_channels(&chosen)?)?;
    let epochs = pick(&a.epochs, &file.epochs).unwrap_or(10);
    let lr = pick(&a.lr, &file.lr).unwrap_or(4e-3);
    let drop = pick(&a.lr_drop, &file.lr_drop).unwrap_or(0.1);
    let defaults = TrainConfig::default();
    let tcfg = TrainConfig {
        batch_size: pick(&a.batch_size, &file.batch_size).unwrap_or(defaults.batch_size),
        epochs: vec![epochs - epochs / 2, epochs / 2],
        learning_rates: vec![lr, lr * drop],
        seed,
        lambda_reg: pick(&a.lambda_reg, &file.lambda_reg).unwrap_or(defaults.lambda_reg),
        lambda_l2: pick(&a.lambda_l2, &file.lambda_l2).unwrap_or(defaults.lambda_l2),
    };
    tcfg.validate()?;

    let model = Model::init(cfg, seed)?;
    let mut windows = Vec::new();
    for seq in &chosen {
        windows.extend(prepare_windows(
            seq,
            &dataset.annotations,
            model.config.input_mode,
            true,
        )?);
    }
    let samples = prepare_samples(&model, &windows)?;
    eprintln!(
        "training on {} windows from {} videos ({} subset), {} epochs",
        samples.len(),
        chosen.len(),
        subset,
        tcfg.total_epochs()
    );
    let started = Instant::now();
    let mut log = match pick(&a.metrics, &file.metrics) {
        Some(p) => Some(create(&p)?),
        None => None,
    };
    let history = train(
        &model,
        &samples,
        &tcfg,
        log.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = log {
        w.flush().map_err(|e| Error::Io {
            path: PathBuf::from("<metrics log>"),
            source: e,
        })?;
    }
    for m in &history {
        eprintln!(
            "epoch {:>2}  loss {:.4}  (sub-graph {:.4}, node {:.4})  lr {:.1e}",
            m.epoch, m.loss_total, m.loss_g, m.loss_n, m.lr
        );
    }
    model.save(&out)?;
    eprintln!(
        "trained in {:.1}s, checkpoint {}",
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn run_infer(a: InferArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let manifest = require(&a.manifest, &file.manifest, "manifest")?;
    let checkpoint = require(&a.checkpoint, &file.checkpoint, "checkpoint")?;
    let out = require(&a.out, &file.out, "out")?;
    let post = post_config(&a.post, &file)?;
    let model = Model::load(&checkpoint, false)?;
    let sequences = load_sequences(&manifest)?;
    let subset = pick(&a.subset, &file.subset);
    let annotations = match (pick(&a.annotations, &file.annotations), &subset) {
        (Some(p), Some(_)) => AnnotationSet::load(&p)?,
        (None, Some(_)) => return Err(Error::Config("--subset needs --annotations".into())),
        _ => AnnotationSet::default(),
    };
    let chosen = select(&sequences, &annotations, subset.as_deref());
    let started = Instant::now();
    let raw = score_sequences(&model, &chosen, model.config.input_mode)?;
    if let Some(path) = pick(&a.raw_scores, &file.raw_scores) {
        write_json(&path, &raw)?;
    }
    let detections = detections_from_scores(&raw, &post)?;
    detections.save(&out)?;
    eprintln!(
        "scored {} videos in {:.1}s, detections {}",
        chosen.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GridPoint {
    alpha: f64,
    average_map: f64,
    map: Vec<f64>,
}

#[derive(Serialize)]
struct GridReport {
    thresholds: Vec<f64>,
    grid: Vec<GridPoint>,
    best_alpha: f64,
    report: snippetgraph_core::EvalReport,
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let annotations =
        AnnotationSet::load(&require(&a.annotations, &file.annotations, "annotations")?)?;
    let subset = pick(&a.subset, &file.subset);
    let subset = subset.as_deref().filter(|s| *s != "all");
    let agnostic = a.class_agnostic || file.class_agnostic.unwrap_or(false);
    let thresholds = pick(&a.thresholds, &file.thresholds).unwrap_or_else(default_thresholds);
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Config("thresholds must lie in [0, 1]".into()));
    }

    if a.alpha_grid {
        let path = require(&a.raw_scores, &file.raw_scores, "raw-scores")?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let raw: Vec<WindowScores> = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        let post = post_config(&a.post, &file)?;
        let results = alpha_search(&raw, &post, &annotations, subset, &thresholds, agnostic)?;
        let mut best = 0;
        for (i, (alpha, r)) in results.iter().enumerate() {
            println!("alpha {alpha:.1}  average mAP {:.4}", r.average_map);
            if r.average_map > results[best].1.average_map {
                best = i;
            }
        }
        let (best_alpha, report) = results[best].clone();
        println!("best alpha {best_alpha:.1}");
        print!("{}", report.to_table());
        if let Some(out) = pick(&a.out, &file.out) {
            let grid = results
                .iter()
                .map(|(alpha, r)| GridPoint {
                    alpha: *alpha,
                    average_map: r.average_map,
                    map: r.map.clone(),
                })
                .collect();
            write_json(
                &out,
                &GridReport {
                    thresholds,
                    grid,
                    best_alpha,
                    report,
                },
            )?;
        }
        return Ok(());
    }

    let predictions = require(&a.predictions, &None, "predictions")?;
    let detections = DetectionFile::load(&predictions)?;
    let report = evaluate(&detections, &annotations, subset, &thresholds, agnostic);
    if report.empty_ground_truth {
        eprintln!("warning: no ground truth to evaluate against");
    }
    print!("{}", report.to_table());
    if let Some(out) = pick(&a.out, &file.out) {
        write_json(&out, &report)?;
    }
    Ok(())
}

fn run_export(a: ExportArgs) -> Result<()> {
    let sequences = load_sequences(&a.manifest)?;
    let seq = sequences
        .iter()
        .find(|s| s.video_id == a.video)
        .ok_or_else(|| Error::Data(format!("video {} not in manifest", a.video)))?;
    let model = match &a.checkpoint {
        Some(p) => Model::load(p, false)?,
        None => Model::init(
            model_config(&a.model, &FileConfig::default(), seq.channels)?,
            a.seed,
        )?,
    };
    let mut channel_major = vec![0.0; seq.channels * seq.len];
    for l in 0..seq.len {
        for (c, v) in seq.row(l).iter().enumerate() {
            channel_major[c * seq.len + l] = *v;
        }
    }
    let graph = model.video_graph(&features_tensor(seq.channels, seq.len, &channel_major)?)?;
    let export = graph.export();
    match &a.out {
        Some(p) => write_json(p, &export)?,
        None => println!("{}", serde_json::to_string_pretty(&export)?),
    }
    if let Some(p) = &a.dot {
        let mut w = create(p)?;
        w.write_all(export.to_dot().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
    }
    let counts: BTreeMap<usize, usize> = export.layers.iter().map(Vec::len).enumerate().collect();
    eprintln!(
        "{} snippets, edges per block {:?}",
        export.len,
        counts.values().collect::<Vec<_>>()
    );
    Ok(())
}
