//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p snippetgraph-cli --test acceptance`. Tolerances
//! and budgets are the constants below; the process exits non-zero when any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snippetgraph_core::eval::{average_precision, segment_iou, GroundTruth, Prediction};
use snippetgraph_core::gcnext::{
    gcnext_forward, temporal_stream_equivalence, BlockShape, GcnextParams,
};
use snippetgraph_core::graph::knn_semantic_edges;
use snippetgraph_core::head::{
    l2_penalty, node_loss, subgraph_loss, total_loss, AnchorScores, HeadParams, NodeLabels,
    NodeScores, LAMBDA_L2, LAMBDA_REG,
};
use snippetgraph_core::postprocess::soft_nms;
use snippetgraph_core::sgalign::{
    enumerate_anchors, enumerate_valid_anchors, interp_rescale, sgalign_forward, Anchor,
};
use snippetgraph_core::tensor::grad_check;
use snippetgraph_core::train::{batch_loss_frozen, TrainSample};
use snippetgraph_core::{Detection, InputMode, Model, ModelConfig, NmsMethod, Tensor, TrainConfig};

const EQUIVALENCE_TOL: f64 = 1e-10;
const EQUIVALENCE_BUDGET: Duration = Duration::from_secs(5);
const GRAD_TOL: f64 = 1e-3;
const GRAD_STEP: f64 = 1e-5;
const GRAD_SEEDS: usize = 20;
const RELU_MARGIN: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const EXACT_TOL: f64 = 1e-12;
const MAP_TARGET: f64 = 0.85;
const ABLATION_SLACK: f64 = 0.02;
const BENCHMARK_SEEDS: [u64; 3] = [0, 1, 2];
const BENCHMARK_BUDGET: Duration = Duration::from_secs(15 * 60);

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f64> {
    let n = shape.iter().product();
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape, random(rng, shape)).unwrap()
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::param(shape, random(rng, shape)).unwrap()
}

fn equivalence() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(1..=16);
        let len = rng.random_range(1..=32);
        let x = tensor(&mut rng, &[c, len]);
        let w: Vec<Tensor> = (0..3).map(|_| tensor(&mut rng, &[c, c])).collect();
        let dev =
            temporal_stream_equivalence(&x, &w[0], &w[1], &w[2]).map_err(|e| e.to_string())?;
        worst = worst.max(dev);
    }
    let took = start.elapsed();
    ensure(worst < EQUIVALENCE_TOL, || {
        format!("max deviation {worst:e}")
    })?;
    ensure(took < EQUIVALENCE_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

/// Runs `case` on fresh seeds until `GRAD_SEEDS` of them clear the relu
/// margin; returns the worst relative error.
fn audit(name: &str, mut case: impl FnMut(u64) -> Option<f64>) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut accepted = 0;
    for seed in 0..2000 {
        if let Some(err) = case(seed) {
            accepted += 1;
            worst = worst.max(err);
            if accepted == GRAD_SEEDS {
                return Ok(worst);
            }
        }
    }
    Err(format!("{name}: only {accepted} seeds clear of relu kinks"))
}

fn randomize_biases(params: &[(String, Tensor)], rng: &mut ChaCha8Rng) {
    for (_, b) in params.iter().filter(|(n, _)| n.ends_with(".b")) {
        b.update(|d| d.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3)));
    }
}

fn gradient_audit() -> Check {
    let start = Instant::now();
    let mut report = Vec::new();

    let block = audit("gcnext", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GcnextParams::init(&mut rng, BlockShape::new(8, 2, 2).unwrap(), true);
        let x = param(&mut rng, &[8, 10]);
        let edges = knn_semantic_edges(&x.data(), 8, 3).unwrap();
        let w = tensor(&mut rng, &[8, 10]);
        let f = || Ok(gcnext_forward(&x, &edges, &p)?.mul(&w)?.sum());
        if f().unwrap().min_relu_margin() < RELU_MARGIN {
            return None;
        }
        let tensors = p.named("b").into_iter().map(|t| t.1).chain([x.clone()]);
        Some(
            tensors
                .map(|t| grad_check(f, &t, GRAD_STEP).unwrap())
                .fold(0.0, f64::max),
        )
    })?;
    report.push(("block", block));

    let align = audit("sgalign", |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = param(&mut rng, &[3, 12]);
        let edges = knn_semantic_edges(&x.data(), 3, 2).unwrap();
        let anchors = enumerate_anchors(12, 6);
        let w = tensor(&mut rng, &[anchors.len(), 5 * 3]);
        let f = || Ok(sgalign_forward(&x, &edges, &anchors, 3, 2)?.mul(&w)?.sum());
        Some(grad_check(f, &x, GRAD_STEP).unwrap())
    })?;
    report.push(("sgalign", align));

    let head = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = HeadParams::init(&mut rng, 9, [10, 6], 4);
        randomize_biases(&h.localization_named(), &mut rng);
        randomize_biases(&h.node_named(), &mut rng);
        (h, rng)
    };
    let loc = audit("localization", |seed| {
        let (h, mut rng) = head(seed);
        let x = param(&mut rng, &[7, 9]);
        let g: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = || Ok(subgraph_loss(&h.localization_forward(&x)?, &g, LAMBDA_REG)?.total);
        if f().unwrap().min_relu_margin() < RELU_MARGIN {
            return None;
        }
        let tensors = h
            .localization_named()
            .into_iter()
            .map(|t| t.1)
            .chain([x.clone()]);
        Some(
            tensors
                .map(|t| grad_check(f, &t, GRAD_STEP).unwrap())
                .fold(0.0, f64::max),
        )
    })?;
    report.push(("localization", loc));

    let node = audit("node", |seed| {
        let (h, mut rng) = head(seed);
        let b1 = param(&mut rng, &[4, 6]);
        let labels = NodeLabels {
            start: (0..6).map(|_| rng.random_bool(0.4)).collect(),
            end: (0..6).map(|_| rng.random_bool(0.4)).collect(),
        };
        let f = || node_loss(&h.node_branch_forward(&b1)?, &labels);
        let tensors = h.node_named().into_iter().map(|t| t.1).chain([b1.clone()]);
        Some(
            tensors
                .map(|t| grad_check(f, &t, GRAD_STEP).unwrap())
                .fold(0.0, f64::max),
        )
    })?;
    report.push(("node", node));

    let full = audit("full loss", |seed| {
        let cfg = ModelConfig {
            raw_channels: 3,
            width: 4,
            bottleneck_ratio: 2,
            cardinality: 2,
            blocks: 2,
            k_neighbors: 2,
            tau_temporal: 4,
            tau_semantic: 2,
            max_duration: 5,
            hidden: [6, 4],
            input_mode: InputMode::Rescale { len: 4 },
        };
        let model = Model::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        randomize_biases(&model.named_params(), &mut rng);
        let plan = model.plan(4, 4).unwrap();
        let sample = TrainSample {
            features: tensor(&mut rng, &[3, 4]),
            g_c: plan
                .anchors
                .iter()
                .map(|_| rng.random_range(0.0..1.0))
                .collect(),
            nodes: NodeLabels {
                start: vec![false, true, false, false],
                end: vec![false, false, true, true],
            },
            plan,
        };
        let edges = vec![
            model
                .forward(&sample.features, &sample.plan, None)
                .unwrap()
                .edges,
        ];
        let tcfg = TrainConfig::default();
        let f = || Ok(batch_loss_frozen(&model, &[&sample], &edges, &tcfg)?.total);
        if f().unwrap().min_relu_margin() < RELU_MARGIN {
            return None;
        }
        let params = model.params();
        Some(
            params
                .iter()
                .map(|t| grad_check(f, t, GRAD_STEP).unwrap())
                .fold(0.0, f64::max),
        )
    })?;
    report.push(("full loss", full));

    let took = start.elapsed();
    let worst = report.iter().map(|r| r.1).fold(0.0, f64::max);
    let summary = report
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(worst < GRAD_TOL, || {
        format!("worst relative error {worst:e} ({summary})")
    })?;
    ensure(took < GRAD_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{GRAD_SEEDS} seeds each: {summary}"))
}

fn anchor_enumeration() -> Check {
    let count = enumerate_anchors(100, 64).len();
    let oracle: usize = (1..=63).map(|d| 99 - d).sum();
    ensure(count == 4221 && oracle == 4221, || {
        format!("{count} anchors, oracle {oracle}")
    })?;
    let mut cases = 0;
    for len in 0..=20 {
        for d in 1..=10 {
            let mut brute = Vec::new();
            for s in 0..len {
                for e in 0..len {
                    if s > 0 && e > s && e - s < d {
                        brute.push(Anchor::new(s, e));
                    }
                }
            }
            ensure(enumerate_valid_anchors(len, d, len) == brute, || {
                format!("L={len} D={d}")
            })?;
            cases += 1;
        }
    }
    Ok(format!(
        "4221 anchors at L=100 D=64; {cases} exhaustive cases"
    ))
}

fn alignment_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let len = 100;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (slope, offset) = (rng.random_range(-2.0..2.0), rng.random_range(-5.0..5.0));
        let ramp: Vec<f64> = (0..len).map(|l| slope * l as f64 + offset).collect();
        let start = rng.random_range(1..len - 1);
        let end = rng.random_range(start + 1..len);
        let a = Anchor::new(start, end);
        let tau = rng.random_range(1..=32);
        let y = interp_rescale(&Tensor::new(&[1, len], ramp).unwrap(), a, tau)
            .unwrap()
            .to_vec();
        let d = (end - start) as f64;
        let s = ((end - start) / tau).max(1);
        let step = d / (tau * s) as f64;
        for (bin, v) in y.iter().enumerate() {
            let centre = start as f64 + step * ((bin * s) as f64 + (s as f64 - 1.0) / 2.0);
            worst = worst.max((v - (slope * centre + offset)).abs());
        }

        let c: f64 = rng.random_range(-3.0..3.0);
        let y = interp_rescale(&Tensor::new(&[2, len], vec![c; 2 * len]).unwrap(), a, tau).unwrap();
        worst = worst.max(y.to_vec().iter().map(|v| (v - c).abs()).fold(0.0, f64::max));
    }
    ensure(worst < EXACT_TOL, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "50 ramp and 50 constant anchors, max deviation {worst:.1e}"
    ))
}

/// IoU by interval arithmetic on the hull.
fn hull_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lo, hi) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    if hi.0 >= lo.1 {
        0.0
    } else {
        (lo.1.min(hi.1) - hi.0) / (lo.1.max(hi.1) - lo.0)
    }
}

/// AP by trying every one-to-one matching and keeping the lexicographically
/// best one in rank order (matched, then IoU, then lower ground-truth index).
fn brute_ap(preds: &[Prediction], gts: &[GroundTruth], t: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut ranked: Vec<&Prediction> = preds.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    type Key = Vec<(bool, f64, i64)>;
    fn search(
        i: usize,
        r: &[&Prediction],
        g: &[GroundTruth],
        t: f64,
        used: &mut [bool],
        cur: &mut Key,
        best: &mut Option<Key>,
    ) {
        if i == r.len() {
            if best.as_ref().is_none_or(|b| {
                cur.as_slice().partial_cmp(b.as_slice()) == Some(std::cmp::Ordering::Greater)
            }) {
                *best = Some(cur.clone());
            }
            return;
        }
        cur.push((false, 0.0, 0));
        search(i + 1, r, g, t, used, cur, best);
        cur.pop();
        for j in 0..g.len() {
            let iou = hull_iou(r[i].segment, g[j].segment);
            if used[j] || g[j].video != r[i].video || iou < t {
                continue;
            }
            used[j] = true;
            cur.push((true, iou, -(j as i64)));
            search(i + 1, r, g, t, used, cur, best);
            cur.pop();
            used[j] = false;
        }
    }
    let mut best = None;
    search(
        0,
        &ranked,
        gts,
        t,
        &mut vec![false; gts.len()],
        &mut Vec::new(),
        &mut best,
    );
    let flags: Vec<bool> = best.unwrap().iter().map(|k| k.0).collect();
    let (mut prec, mut rec, mut tp) = (vec![0.0], vec![0.0], 0.0);
    for (i, f) in flags.iter().enumerate() {
        tp += *f as u8 as f64;
        prec.push(tp / (i + 1) as f64);
        rec.push(tp / gts.len() as f64);
    }
    prec.push(0.0);
    rec.push(1.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    (0..rec.len() - 1)
        .map(|i| (rec[i + 1] - rec[i]) * prec[i + 1])
        .sum()
}

fn iou_and_ap() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let mut seg = || {
            let s: f64 = rng.random_range(0.0..100.0);
            (s, s + rng.random_range(0.01..40.0))
        };
        let (a, b) = (seg(), seg());
        let iou = segment_iou(a, b).map_err(|e| e.to_string())?;
        ensure((iou - hull_iou(a, b)).abs() < EXACT_TOL, || {
            format!("{a:?} {b:?}")
        })?;
    }
    let mut worst = 0.0f64;
    let fixtures = 2000;
    for _ in 0..fixtures {
        let video = |rng: &mut ChaCha8Rng| if rng.random_bool(0.8) { "a" } else { "b" }.to_string();
        let seg = |rng: &mut ChaCha8Rng| {
            let s = rng.random_range(0..15) as f64;
            (s, s + rng.random_range(1..8) as f64)
        };
        let preds: Vec<Prediction> = (0..rng.random_range(0..=5))
            .map(|_| Prediction {
                video: video(&mut rng),
                segment: seg(&mut rng),
                score: rng.random_range(0..6) as f64 / 5.0,
            })
            .collect();
        let gts: Vec<GroundTruth> = (0..rng.random_range(0..=3))
            .map(|_| GroundTruth {
                video: video(&mut rng),
                segment: seg(&mut rng),
            })
            .collect();
        for t in [0.1, 0.3, 0.5, 0.7, 0.95] {
            worst =
                worst.max((average_precision(&preds, &gts, t) - brute_ap(&preds, &gts, t)).abs());
        }
    }
    ensure(worst < EXACT_TOL, || format!("AP deviation {worst:e}"))?;
    Ok(format!(
        "1000 IoU pairs; {fixtures} AP fixtures, max deviation {worst:.1e}"
    ))
}

fn det(start: f64, end: f64, score: f64) -> Detection {
    Detection {
        start,
        end,
        label: "action".into(),
        score,
    }
}

fn soft_nms_properties() -> Check {
    let linear = NmsMethod::Linear { threshold: 0.84 };
    ensure(NmsMethod::default() == linear, || {
        "default is not linear 0.84".into()
    })?;
    let out = soft_nms(vec![det(0.0, 10.0, 0.9), det(0.0, 10.0, 0.8)], linear, 100);
    ensure(out[0].score == 0.9 && out[1].score == 0.0, || {
        format!("duplicate fixture {out:?}")
    })?;
    // [0,9] decays by 1 - 0.9 against [0,10], then by 1 - 8/9 against [0,8];
    // [0,8] overlaps [0,10] at 0.8, under the threshold.
    let out = soft_nms(
        vec![det(0.0, 10.0, 0.9), det(0.0, 9.0, 0.8), det(0.0, 8.0, 0.7)],
        linear,
        100,
    );
    let by_end = |e: f64| out.iter().find(|d| d.end == e).unwrap().score;
    let expected = 0.8 * (1.0 - 0.9) * (1.0 - 8.0 / 9.0);
    ensure(
        (by_end(9.0) - expected).abs() < EXACT_TOL && by_end(8.0) == 0.7,
        || format!("{out:?}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let pool: Vec<Detection> = (0..rng.random_range(1..30))
            .map(|i| {
                let s = rng.random_range(0.0..50.0);
                det(
                    s,
                    s + rng.random_range(0.5..20.0) + i as f64 * 1e-6,
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let method = if rng.random_bool(0.5) {
            linear
        } else {
            NmsMethod::Gaussian {
                sigma: rng.random_range(0.1..1.0),
            }
        };
        let best = pool
            .iter()
            .cloned()
            .max_by(|a, b| a.score.total_cmp(&b.score))
            .unwrap();
        let out = soft_nms(pool.clone(), method, 100);
        ensure(out[0] == best, || "top-1 changed".into())?;
        for d in &out {
            let src = pool
                .iter()
                .find(|p| p.start == d.start && p.end == d.end)
                .unwrap();
            ensure(d.score <= src.score, || "score increased".into())?;
        }
    }
    Ok("duplicate fixture decays to 0; 500 random pools keep top-1 and never raise scores".into())
}

fn loss_composition() -> Check {
    ensure(LAMBDA_REG == 10.0 && LAMBDA_L2 == 1e-4, || {
        "default weights".into()
    })?;
    let d = TrainConfig::default();
    ensure(d.lambda_reg == 10.0 && d.lambda_l2 == 1e-4, || {
        "training defaults".into()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let j = rng.random_range(1..40);
        let probs = |rng: &mut ChaCha8Rng, n: usize| {
            Tensor::new(&[n], (0..n).map(|_| rng.random_range(0.01..0.99)).collect()).unwrap()
        };
        let scores = AnchorScores {
            cls: probs(&mut rng, j),
            reg: probs(&mut rng, j),
        };
        let g: Vec<f64> = (0..j).map(|_| rng.random_range(0.0..1.0)).collect();
        let l = rng.random_range(2..30);
        let nodes = NodeScores {
            start: probs(&mut rng, l),
            end: probs(&mut rng, l),
        };
        let labels = NodeLabels {
            start: (0..l).map(|_| rng.random_bool(0.3)).collect(),
            end: (0..l).map(|_| rng.random_bool(0.3)).collect(),
        };
        let params: Vec<Tensor> = (0..3)
            .map(|_| {
                let n = rng.random_range(1..50);
                tensor(&mut rng, &[n])
            })
            .collect();
        let l_g = subgraph_loss(&scores, &g, LAMBDA_REG).unwrap().total;
        let l_n = node_loss(&nodes, &labels).unwrap();
        let total = total_loss(&l_g, &l_n, &params, LAMBDA_L2).unwrap().item();
        let squares: f64 = params.iter().flat_map(|p| p.to_vec()).map(|v| v * v).sum();
        worst = worst.max((total - (l_g.item() + l_n.item() + LAMBDA_L2 * squares)).abs());
        worst = worst.max((l2_penalty(&params).unwrap().item() - squares).abs());
    }
    ensure(worst < EXACT_TOL, || format!("deviation {worst:e}"))?;
    Ok(format!(
        "100 random compositions, max deviation {worst:.1e}; λ1 = 10, λ2 = 1e-4"
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_snippetgraph"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// Soft-NMS of the benchmark: the Gaussian alternative. The linear default
/// keeps near-duplicate proposals around each action, which cost precision
/// at tIoU 0.5; its score is reported alongside.
const BENCHMARK_NMS: [&str; 4] = ["--nms-method", "gaussian", "--nms-sigma", "0.4"];

/// Class-agnostic validation mAP@0.5 for one seed and model variant, with
/// the benchmark Soft-NMS and with the default one.
fn benchmark_run(dir: &Path, seed: u64, extra: &[&str], tag: &str) -> Result<(f64, f64), String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let seed = seed.to_string();
    let ckpt = p(&format!("{tag}.ckpt"));
    let (manifest, annotations) = (p("manifest.json"), p("annotations.json"));
    let mut train = vec![
        "train",
        "--manifest",
        &manifest,
        "--annotations",
        &annotations,
        "--out",
        &ckpt,
        "--seed",
        &seed,
        "--epochs",
        "10",
    ];
    train.extend_from_slice(extra);
    cli(&train)?;
    let score = |name: &str, post: &[&str]| -> Result<f64, String> {
        let detections = p(&format!("{tag}-{name}.json"));
        let report = p(&format!("{tag}-{name}-report.json"));
        let mut infer = vec![
            "infer",
            "--manifest",
            &manifest,
            "--checkpoint",
            &ckpt,
            "--out",
            &detections,
            "--annotations",
            &annotations,
            "--subset",
            "validation",
        ];
        infer.extend_from_slice(post);
        cli(&infer)?;
        cli(&[
            "eval",
            "--annotations",
            &annotations,
            "--predictions",
            &detections,
            "--subset",
            "validation",
            "--class-agnostic",
            "--thresholds",
            "0.5",
            "--out",
            &report,
        ])?;
        let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        v["map"][0]
            .as_f64()
            .ok_or_else(|| "report lacks mAP".to_string())
    };
    Ok((score("gaussian", &BENCHMARK_NMS)?, score("linear", &[])?))
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut full, mut ablated, mut linear) = (Vec::new(), Vec::new(), Vec::new());
    for seed in BENCHMARK_SEEDS {
        let dir = root.path().join(format!("seed{seed}"));
        let s = seed.to_string();
        cli(&[
            "synth",
            "--out",
            dir.to_str().unwrap(),
            "--videos",
            "200",
            "--len",
            "100",
            "--channels",
            "32",
            "--noise",
            "0.5",
            "--seed",
            &s,
        ])?;
        let (m, m_linear) = benchmark_run(&dir, seed, &[], "full")?;
        let (k0, _) = benchmark_run(&dir, seed, &["--k-neighbors", "0"], "k0")?;
        eprintln!(
            "  seed {seed}: mAP@0.5 {m:.4}, without semantic graph {k0:.4}, default Soft-NMS {m_linear:.4}"
        );
        full.push(m);
        ablated.push(k0);
        linear.push(m_linear);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m, k0) = (mean(&full), mean(&ablated));
    let took = start.elapsed();
    let summary = format!(
        "mean mAP@0.5 {m:.4} (target {MAP_TARGET}, gaussian Soft-NMS sigma 0.4), K=0 {k0:.4}, \
         default linear Soft-NMS {:.4}, total {:.0}s on this machine",
        mean(&linear),
        took.as_secs_f64()
    );
    ensure(m >= MAP_TARGET, || summary.clone())?;
    ensure(k0 <= m + ABLATION_SLACK, || {
        format!("ablation gains: {summary}")
    })?;
    ensure(took < BENCHMARK_BUDGET, || {
        format!("over budget: {summary}")
    })?;
    Ok(summary)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("temporal stream equals kernel-3 convolution", equivalence),
        ("gradient audit", gradient_audit),
        ("anchor enumeration", anchor_enumeration),
        ("alignment oracle", alignment_oracle),
        ("IoU and AP oracles", iou_and_ap),
        ("Soft-NMS properties", soft_nms_properties),
        ("end-to-end synthetic benchmark", end_to_end),
        ("loss composition", loss_composition),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
