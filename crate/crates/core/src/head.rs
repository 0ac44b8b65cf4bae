//! Anchor scoring, node classification, training labels and losses.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::eval::interval_iou;
use crate::init::{uniform, zeros_param};
use crate::sgalign::Anchor;
use crate::tensor::{BinnedPlan, Tensor};

/// Default weight of the IoU regression term.
pub const LAMBDA_REG: f64 = 10.0;
/// Default weight of the parameter L2 penalty.
pub const LAMBDA_L2: f64 = 1e-4;
/// Probability clip inside logarithms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct HeadParams {
    /// `F × H1`
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    /// `H1 × H2`
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
    /// `H2 × 2`: column 0 classifies, column 1 regresses.
    pub fc3_w: Tensor,
    pub fc3_b: Tensor,
    /// `C × 2`: start and end probabilities per node.
    pub node_w: Tensor,
    pub node_b: Tensor,
}

/// Per-anchor scores, each of shape `[J]`.
#[derive(Debug, Clone)]
pub struct AnchorScores {
    pub cls: Tensor,
    pub reg: Tensor,
}

/// Per-node probabilities, each of shape `[L]`.
#[derive(Debug, Clone)]
pub struct NodeScores {
    pub start: Tensor,
    pub end: Tensor,
}

impl HeadParams {
    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: [usize; 2], width: usize) -> Self {
        Self {
            fc1_w: uniform(rng, &[input, hidden[0]], input),
            fc1_b: zeros_param(&[hidden[0]]),
            fc2_w: uniform(rng, &[hidden[0], hidden[1]], hidden[0]),
            fc2_b: zeros_param(&[hidden[1]]),
            fc3_w: uniform(rng, &[hidden[1], 2], hidden[1]),
            fc3_b: zeros_param(&[2]),
            node_w: uniform(rng, &[width, 2], width),
            node_b: zeros_param(&[2]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.fc1_w.shape()[0]
    }

    pub fn localization_named(&self) -> Vec<(String, Tensor)> {
        [
            ("head.fc1.w", &self.fc1_w),
            ("head.fc1.b", &self.fc1_b),
            ("head.fc2.w", &self.fc2_w),
            ("head.fc2.b", &self.fc2_b),
            ("head.fc3.w", &self.fc3_w),
            ("head.fc3.b", &self.fc3_b),
        ]
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect()
    }

    pub fn node_named(&self) -> Vec<(String, Tensor)> {
        vec![
            ("head.node.w".to_string(), self.node_w.clone()),
            ("head.node.b".to_string(), self.node_b.clone()),
        ]
    }

    /// Three affine layers (relu between) then sigmoid on `J × F` features.
    pub fn localization_forward(&self, features: &Tensor) -> Result<AnchorScores> {
        if features.shape().len() != 2 || features.shape()[1] != self.input_width() {
            return Err(Error::Config(format!(
                "localization expects {} input features, got shape {:?}",
                self.input_width(),
                features.shape()
            )));
        }
        let h1 = features.matmul(&self.fc1_w)?.add_bias(&self.fc1_b)?.relu();
        self.localization_tail(&h1)
    }

    /// First layer fused with alignment: `parts` pairs `L × C` node rows
    /// with the binned plan of their segment of the aligned feature, in
    /// feature order.
    pub fn fused_first_layer(&self, parts: &[(&Tensor, &Rc<BinnedPlan>)]) -> Result<Tensor> {
        let mut offset = 0;
        let mut acc: Option<Tensor> = None;
        for (rows, plan) in parts {
            let width = plan.bins() * rows.shape()[1];
            if offset + width > self.input_width() {
                return Err(Error::Config(format!(
                    "aligned features exceed the {} inputs of the first layer",
                    self.input_width()
                )));
            }
            let w = self.fc1_w.slice(0, offset, offset + width)?;
            let h = rows.binned_linear(&w, plan)?;
            acc = Some(match acc {
                Some(a) => a.add(&h)?,
                None => h,
            });
            offset += width;
        }
        if offset != self.input_width() {
            return Err(Error::Config(format!(
                "aligned features cover {offset} of {} inputs",
                self.input_width()
            )));
        }
        let acc = acc.ok_or_else(|| Error::Contract("no aligned features".into()))?;
        Ok(acc.add_bias(&self.fc1_b)?.relu())
    }

    /// Layers two and three on first-layer activations.
    pub fn localization_tail(&self, h1: &Tensor) -> Result<AnchorScores> {
        let h2 = h1.matmul(&self.fc2_w)?.add_bias(&self.fc2_b)?.relu();
        let out = h2.matmul(&self.fc3_w)?.add_bias(&self.fc3_b)?.sigmoid();
        split_columns(&out).map(|(cls, reg)| AnchorScores { cls, reg })
    }

    /// Start/end probabilities for each node of `C × L` block-1 features.
    pub fn node_branch_forward(&self, block1: &Tensor) -> Result<NodeScores> {
        let out = block1
            .transpose()?
            .matmul(&self.node_w)?
            .add_bias(&self.node_b)?
            .sigmoid();
        split_columns(&out).map(|(start, end)| NodeScores { start, end })
    }
}

fn split_columns(out: &Tensor) -> Result<(Tensor, Tensor)> {
    let rows = out.shape()[0];
    Ok((
        out.slice(1, 0, 1)?.reshape(&[rows])?,
        out.slice(1, 1, 2)?.reshape(&[rows])?,
    ))
}

/// Max IoU of each anchor with any ground-truth segment (snippet
/// coordinates); zero without ground truth.
pub fn assign_anchor_labels(anchors: &[Anchor], ground_truth: &[(f64, f64)]) -> Vec<f64> {
    anchors
        .iter()
        .map(|a| {
            ground_truth
                .iter()
                .map(|&g| interval_iou((a.start as f64, a.end as f64), g))
                .fold(0.0, f64::max)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLabels {
    pub start: Vec<bool>,
    pub end: Vec<bool>,
}

/// Flags nodes within `max(1, d/10)` of a ground-truth start or end.
pub fn assign_node_labels(len: usize, ground_truth: &[(f64, f64)]) -> NodeLabels {
    let mut labels = NodeLabels {
        start: vec![false; len],
        end: vec![false; len],
    };
    for &(s, e) in ground_truth {
        let radius = ((e - s) / 10.0).max(1.0);
        for l in 0..len {
            let x = l as f64;
            if (x - s).abs() <= radius {
                labels.start[l] = true;
            }
            if (x - e).abs() <= radius {
                labels.end[l] = true;
            }
        }
    }
    labels
}

/// Per-element weights balancing positives against negatives:
/// `J/(2·J_pos)` and `J/(2·J_neg)`, or 1 when one class is absent.
pub fn class_balance_weights(targets: &[f64]) -> Vec<f64> {
    let n = targets.len() as f64;
    let pos = targets.iter().filter(|&&t| t > 0.5).count() as f64;
    let neg = n - pos;
    let (wp, wn) = if pos == 0.0 || neg == 0.0 {
        (1.0, 1.0)
    } else {
        (n / (2.0 * pos), n / (2.0 * neg))
    };
    targets
        .iter()
        .map(|&t| if t > 0.5 { wp } else { wn })
        .collect()
}

fn balanced_bce(p: &Tensor, targets: &[f64]) -> Result<Tensor> {
    p.weighted_bce(targets, &class_balance_weights(targets), BCE_EPS)
}

#[derive(Debug, Clone)]
pub struct SubgraphLoss {
    pub total: Tensor,
    pub cls: Tensor,
    pub reg: Tensor,
}

/// Weighted cross entropy of `p_cls` against `g_c > 0.5` plus `λ1` times the
/// mean squared error of `p_reg` against `g_c`.
pub fn subgraph_loss(scores: &AnchorScores, g_c: &[f64], lambda_reg: f64) -> Result<SubgraphLoss> {
    if g_c.is_empty() {
        return Err(Error::Contract("sub-graph loss over zero anchors".into()));
    }
    if scores.cls.numel() != g_c.len() || scores.reg.numel() != g_c.len() {
        return Err(Error::dim(
            "subgraph_loss",
            scores.cls.shape(),
            &[g_c.len()],
        ));
    }
    let targets: Vec<f64> = g_c
        .iter()
        .map(|&g| if g > 0.5 { 1.0 } else { 0.0 })
        .collect();
    let cls = balanced_bce(&scores.cls, &targets)?;
    let g = Tensor::new(&[g_c.len()], g_c.to_vec())?;
    let reg = scores.reg.sub(&g)?.square().mean()?.scale(lambda_reg);
    Ok(SubgraphLoss {
        total: cls.add(&reg)?,
        cls,
        reg,
    })
}

/// Sum of the class-balanced cross entropies of the start and end channels.
pub fn node_loss(scores: &NodeScores, labels: &NodeLabels) -> Result<Tensor> {
    let as_f64 = |flags: &[bool]| -> Vec<f64> { flags.iter().map(|&f| f as u8 as f64).collect() };
    if scores.start.numel() != labels.start.len() || scores.end.numel() != labels.end.len() {
        return Err(Error::dim(
            "node_loss",
            scores.start.shape(),
            &[labels.start.len()],
        ));
    }
    balanced_bce(&scores.start, &as_f64(&labels.start))?
        .add(&balanced_bce(&scores.end, &as_f64(&labels.end))?)
}

/// `Σ θ²` over the given parameters.
pub fn l2_penalty(params: &[Tensor]) -> Result<Tensor> {
    let mut acc = Tensor::scalar(0.0);
    for p in params {
        acc = acc.add(&p.square().sum())?;
    }
    Ok(acc)
}

/// `L_g + L_n + λ2 · Σ θ²`.
pub fn total_loss(l_g: &Tensor, l_n: &Tensor, params: &[Tensor], lambda_l2: f64) -> Result<Tensor> {
    l_g.add(l_n)?.add(&l2_penalty(params)?.scale(lambda_l2))
}
