//! The full detector: input projection, GCNeXt backbone, alignment and head.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::InputMode;
use crate::error::{Error, Result};
use crate::gcnext::{backbone_forward, BlockShape, GcnextParams};
use crate::graph::{Edge, VideoGraph};
use crate::head::{AnchorScores, HeadParams, NodeScores};
use crate::init::uniform;
use crate::sgalign::{
    enumerate_valid_anchors, semantic_smooth, sgalign_forward, AlignPlan, Anchor,
};
use crate::tensor::checkpoint::{Archive, Entry};
use crate::tensor::{no_grad, BinnedPlan, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub raw_channels: usize,
    pub width: usize,
    pub bottleneck_ratio: usize,
    pub cardinality: usize,
    pub blocks: usize,
    /// Semantic neighbours per node; 0 disables the semantic stream and the
    /// semantic alignment path.
    pub k_neighbors: usize,
    pub tau_temporal: usize,
    pub tau_semantic: usize,
    pub max_duration: usize,
    pub hidden: [usize; 2],
    /// How videos are cut into model inputs.
    #[serde(default = "default_input_mode")]
    pub input_mode: InputMode,
}

fn default_input_mode() -> InputMode {
    InputMode::Rescale { len: 100 }
}

impl ModelConfig {
    /// Small model for synthetic data on a CPU.
    pub fn synthetic(raw_channels: usize) -> Self {
        Self {
            raw_channels,
            width: 32,
            bottleneck_ratio: 2,
            cardinality: 4,
            blocks: 3,
            k_neighbors: 4,
            tau_temporal: 32,
            tau_semantic: 4,
            max_duration: 64,
            hidden: [128, 32],
            input_mode: default_input_mode(),
        }
    }

    /// Full-width model for real extracted features.
    pub fn activitynet(raw_channels: usize) -> Self {
        Self {
            width: 256,
            cardinality: 32,
            hidden: [512, 128],
            ..Self::synthetic(raw_channels)
        }
    }

    pub fn preset(name: &str, raw_channels: usize) -> Result<Self> {
        match name {
            "synthetic" => Ok(Self::synthetic(raw_channels)),
            "activitynet" => Ok(Self::activitynet(raw_channels)),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn semantic_enabled(&self) -> bool {
        self.k_neighbors > 0
    }

    pub fn effective_tau_semantic(&self) -> usize {
        if self.semantic_enabled() {
            self.tau_semantic
        } else {
            0
        }
    }

    /// Width of one aligned sub-graph feature.
    pub fn aligned_width(&self) -> usize {
        (self.tau_temporal + self.effective_tau_semantic()) * self.width
    }

    pub fn validate(&self) -> Result<BlockShape> {
        if self.raw_channels == 0 || self.blocks == 0 || self.tau_temporal == 0 {
            return Err(Error::Config(
                "raw channels, blocks and temporal resolution must be positive".into(),
            ));
        }
        match self.input_mode {
            InputMode::Rescale { len } if len >= 3 => {}
            InputMode::Window { len, stride } if len >= 3 && len > stride && stride > 0 => {}
            other => return Err(Error::Config(format!("invalid input mode {other:?}"))),
        }
        if self.max_duration < 2 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "max duration must be at least 2 and hidden widths positive".into(),
            ));
        }
        BlockShape::new(self.width, self.bottleneck_ratio, self.cardinality)
    }
}

/// Anchors and fused alignment plans shared by every window with the same
/// length and valid prefix.
#[derive(Debug)]
pub struct WindowPlan {
    pub anchors: Vec<Anchor>,
    temporal: Rc<BinnedPlan>,
    semantic: Option<Rc<BinnedPlan>>,
}

#[derive(Debug, Clone)]
pub struct WindowOutput {
    pub scores: AnchorScores,
    pub nodes: NodeScores,
    pub edges: Vec<Vec<Edge>>,
}

#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    /// `width × raw_channels`
    pub input: Tensor,
    pub blocks: Vec<GcnextParams>,
    pub head: HeadParams,
    plans: RefCell<HashMap<(usize, usize), Rc<WindowPlan>>>,
}

const NODE_PREFIX: &str = "head.node.";

impl Model {
    /// Deterministic initialization from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let shape = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = uniform(
            &mut rng,
            &[config.width, config.raw_channels],
            config.raw_channels,
        );
        let blocks = (0..config.blocks)
            .map(|_| GcnextParams::init(&mut rng, shape, config.semantic_enabled()))
            .collect();
        let head = HeadParams::init(
            &mut rng,
            config.aligned_width(),
            config.hidden,
            config.width,
        );
        Ok(Self {
            config,
            input,
            blocks,
            head,
            plans: RefCell::new(HashMap::new()),
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("input.proj".to_string(), self.input.clone())];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("block{i}")));
        }
        out.extend(self.head.localization_named());
        out.extend(self.head.node_named());
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn zero_grad(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    pub fn plan(&self, len: usize, valid: usize) -> Result<Rc<WindowPlan>> {
        if let Some(p) = self.plans.borrow().get(&(len, valid)) {
            return Ok(Rc::clone(p));
        }
        let anchors = enumerate_valid_anchors(len, self.config.max_duration, valid);
        let temporal = AlignPlan::new(&anchors, self.config.tau_temporal, len)?.binned()?;
        let semantic = match self.config.effective_tau_semantic() {
            0 => None,
            tau => Some(AlignPlan::new(&anchors, tau, len)?.binned()?),
        };
        let plan = Rc::new(WindowPlan {
            anchors,
            temporal,
            semantic,
        });
        self.plans
            .borrow_mut()
            .insert((len, valid), Rc::clone(&plan));
        Ok(plan)
    }

    fn project(&self, features: &Tensor) -> Result<Tensor> {
        if features.shape().len() != 2 || features.shape()[0] != self.config.raw_channels {
            return Err(Error::Config(format!(
                "model expects {} raw channels, got features of shape {:?}",
                self.config.raw_channels,
                features.shape()
            )));
        }
        self.input.matmul(features)
    }

    /// Scores every anchor of `plan` for `raw_channels × L` features.
    /// `frozen` pins the semantic edges of each block.
    pub fn forward(
        &self,
        features: &Tensor,
        plan: &WindowPlan,
        frozen: Option<&[Vec<Edge>]>,
    ) -> Result<WindowOutput> {
        if plan.anchors.is_empty() {
            return Err(Error::Contract("window has no anchors".into()));
        }
        let x = self.project(features)?;
        let backbone = backbone_forward(&x, &self.blocks, self.config.k_neighbors, frozen)?;
        let temporal_rows = backbone.last.transpose()?;
        let h1 = match &plan.semantic {
            Some(sem) => {
                let last_edges = backbone.edges.last().map(Vec::as_slice).unwrap_or(&[]);
                let smoothed = semantic_smooth(&backbone.last, last_edges)?.transpose()?;
                self.head
                    .fused_first_layer(&[(&temporal_rows, &plan.temporal), (&smoothed, sem)])?
            }
            None => self
                .head
                .fused_first_layer(&[(&temporal_rows, &plan.temporal)])?,
        };
        Ok(WindowOutput {
            scores: self.head.localization_tail(&h1)?,
            nodes: self.head.node_branch_forward(&backbone.block1)?,
            edges: backbone.edges,
        })
    }

    /// Same scores as [`Model::forward`], materializing the aligned
    /// sub-graph features before the head.
    pub fn forward_explicit(
        &self,
        features: &Tensor,
        anchors: &[Anchor],
        frozen: Option<&[Vec<Edge>]>,
    ) -> Result<WindowOutput> {
        let x = self.project(features)?;
        let backbone = backbone_forward(&x, &self.blocks, self.config.k_neighbors, frozen)?;
        let last_edges = backbone.edges.last().map(Vec::as_slice).unwrap_or(&[]);
        let aligned = sgalign_forward(
            &backbone.last,
            last_edges,
            anchors,
            self.config.tau_temporal,
            self.config.effective_tau_semantic(),
        )?;
        Ok(WindowOutput {
            scores: self.head.localization_forward(&aligned)?,
            nodes: self.head.node_branch_forward(&backbone.block1)?,
            edges: backbone.edges,
        })
    }

    /// Semantic edges each block builds for `raw_channels × L` features.
    pub fn video_graph(&self, features: &Tensor) -> Result<VideoGraph> {
        let backbone = no_grad(|| {
            let x = self.project(features)?;
            backbone_forward(&x, &self.blocks, self.config.k_neighbors, None)
        })?;
        Ok(VideoGraph {
            len: features.shape()[1],
            k: self.config.k_neighbors,
            semantic: backbone.edges,
        })
    }

    pub fn to_archive(&self) -> Result<Archive> {
        Ok(Archive {
            meta: serde_json::to_string(&self.config)?,
            entries: self
                .named_params()
                .into_iter()
                .map(|(name, t)| Entry {
                    name,
                    shape: t.shape().to_vec(),
                    values: t.to_vec(),
                })
                .collect(),
        })
    }

    /// Rebuilds a model from an archive. Node-branch parameters are only
    /// required when `with_node_branch` is set; absent ones stay zero.
    pub fn from_archive(archive: &Archive, with_node_branch: bool) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&archive.meta)
            .map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
        let model = Self::init(config, 0)?;
        for (name, t) in model.named_params() {
            match archive.get(&name) {
                Some(e) if e.shape == t.shape() => t.set_data(&e.values)?,
                Some(e) => {
                    return Err(Error::Data(format!(
                        "checkpoint entry {name} has shape {:?}, model expects {:?}",
                        e.shape,
                        t.shape()
                    )))
                }
                None if name.starts_with(NODE_PREFIX) && !with_node_branch => {
                    t.update(|d| d.fill(0.0))
                }
                None => return Err(Error::Data(format!("checkpoint lacks parameter {name}"))),
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path, with_node_branch: bool) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?, with_node_branch)
    }
}

/// `raw_channels × L` tensor from channel-major values.
pub fn features_tensor(channels: usize, len: usize, values: &[f64]) -> Result<Tensor> {
    Tensor::new(&[channels, len], values.to_vec())
}
