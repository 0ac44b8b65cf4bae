//! Optimization loop.

use std::io::Write;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::head::{
    assign_anchor_labels, assign_node_labels, node_loss, subgraph_loss, total_loss, AnchorScores,
    NodeLabels, NodeScores, LAMBDA_L2, LAMBDA_REG,
};
use crate::model::{Model, WindowPlan};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Epochs run at each learning rate, in order.
    pub epochs: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub seed: u64,
    pub lambda_reg: f64,
    pub lambda_l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: vec![5, 5],
            learning_rates: vec![4e-3, 4e-4],
            seed: 0,
            lambda_reg: LAMBDA_REG,
            lambda_l2: LAMBDA_L2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.epochs.len() != self.learning_rates.len() || self.epochs.is_empty() {
            return Err(Error::Config(
                "need one learning rate per phase and at least one phase".into(),
            ));
        }
        if self
            .learning_rates
            .iter()
            .any(|&lr| !(lr >= 0.0 && lr.is_finite()))
        {
            return Err(Error::Config(
                "learning rates must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs.iter().sum()
    }

    /// Learning rate of zero-based `epoch`; the last phase extends forever.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for (&n, &lr) in self.epochs.iter().zip(&self.learning_rates) {
            end += n;
            if epoch < end {
                return lr;
            }
        }
        *self.learning_rates.last().unwrap_or(&0.0)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn step(&mut self, params: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.grad() else { continue };
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            p.update(|d| {
                for i in 0..d.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    d[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            });
        }
    }
}

/// A window with its plan and training targets.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: Tensor,
    pub plan: Rc<WindowPlan>,
    pub g_c: Vec<f64>,
    pub nodes: NodeLabels,
}

impl TrainSample {
    pub fn new(model: &Model, window: &Window) -> Result<Self> {
        let plan = model.plan(window.len, window.valid_len)?;
        Ok(Self {
            features: Tensor::new(&[window.channels, window.len], window.features.clone())?,
            g_c: assign_anchor_labels(&plan.anchors, &window.ground_truth),
            nodes: assign_node_labels(window.len, &window.ground_truth),
            plan,
        })
    }
}

/// Samples for windows that have at least one anchor.
pub fn prepare_samples(model: &Model, windows: &[Window]) -> Result<Vec<TrainSample>> {
    windows
        .iter()
        .map(|w| TrainSample::new(model, w))
        .filter(|s| s.as_ref().map_or(true, |s| !s.plan.anchors.is_empty()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: Tensor,
    pub subgraph: Tensor,
    pub node: Tensor,
}

/// Loss of a batch with anchors and nodes pooled across its windows.
pub fn batch_loss(model: &Model, batch: &[&TrainSample], cfg: &TrainConfig) -> Result<BatchLoss> {
    pooled_loss(model, batch, None, cfg)
}

/// [`batch_loss`] with the semantic edges of every window pinned; `edges[i]`
/// holds one list per block for `batch[i]`.
pub fn batch_loss_frozen(
    model: &Model,
    batch: &[&TrainSample],
    edges: &[Vec<Vec<Edge>>],
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    if edges.len() != batch.len() {
        return Err(Error::Contract(format!(
            "{} frozen edge sets for {} windows",
            edges.len(),
            batch.len()
        )));
    }
    pooled_loss(model, batch, Some(edges), cfg)
}

fn pooled_loss(
    model: &Model,
    batch: &[&TrainSample],
    frozen: Option<&[Vec<Vec<Edge>>]>,
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let mut cls = Vec::with_capacity(batch.len());
    let mut reg = Vec::with_capacity(batch.len());
    let mut starts = Vec::with_capacity(batch.len());
    let mut ends = Vec::with_capacity(batch.len());
    let mut g_c = Vec::new();
    let mut labels = NodeLabels {
        start: Vec::new(),
        end: Vec::new(),
    };
    for (i, s) in batch.iter().enumerate() {
        let out = model.forward(&s.features, &s.plan, frozen.map(|f| f[i].as_slice()))?;
        cls.push(out.scores.cls);
        reg.push(out.scores.reg);
        starts.push(out.nodes.start);
        ends.push(out.nodes.end);
        g_c.extend_from_slice(&s.g_c);
        labels.start.extend_from_slice(&s.nodes.start);
        labels.end.extend_from_slice(&s.nodes.end);
    }
    let scores = AnchorScores {
        cls: Tensor::concat(&cls, 0)?,
        reg: Tensor::concat(&reg, 0)?,
    };
    let nodes = NodeScores {
        start: Tensor::concat(&starts, 0)?,
        end: Tensor::concat(&ends, 0)?,
    };
    let subgraph = subgraph_loss(&scores, &g_c, cfg.lambda_reg)?.total;
    let node = node_loss(&nodes, &labels)?;
    let total = total_loss(&subgraph, &node, &model.params(), cfg.lambda_l2)?;
    Ok(BatchLoss {
        total,
        subgraph,
        node,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_g: f64,
    pub loss_n: f64,
    pub lr: f64,
}

/// One pass over `samples` in a shuffled order.
pub fn train_epoch(
    model: &Model,
    samples: &[TrainSample],
    adam: &mut Adam,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochMetrics> {
    if samples.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let lr = cfg.learning_rate(epoch);
    let params = model.params();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let (mut total, mut g, mut n) = (0.0, 0.0, 0.0);
    let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
    for (b, idx) in batches.iter().enumerate() {
        let batch: Vec<&TrainSample> = idx.iter().map(|&i| &samples[i]).collect();
        let loss = batch_loss(model, &batch, cfg)?;
        let value = loss.total.item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss {value} in epoch {epoch}, batch {b} (windows {idx:?})"
            )));
        }
        model.zero_grad();
        loss.total.backward()?;
        adam.step(&params, lr);
        total += value;
        g += loss.subgraph.item();
        n += loss.node.item();
    }
    let count = batches.len() as f64;
    Ok(EpochMetrics {
        epoch,
        loss_total: total / count,
        loss_g: g / count,
        loss_n: n / count,
        lr,
    })
}

/// Runs every configured epoch, writing one JSON line per epoch to `log`.
pub fn train(
    model: &Model,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params());
    let mut history = Vec::with_capacity(cfg.total_epochs());
    for epoch in 0..cfg.total_epochs() {
        let m = train_epoch(model, samples, &mut adam, cfg, epoch, &mut rng)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&m)?)
                .map_err(|e| Error::io("<metrics log>", e))?;
        }
        history.push(m);
    }
    Ok(history)
}
