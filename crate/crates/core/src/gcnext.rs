//! GCNeXt blocks.
//!
//! A block sums a temporal stream, a semantic stream and the input, then
//! applies relu:
//!
//! ```text
//! H = relu(temporal(X) + semantic(X) + X)
//! ```
//!
//! Each stream is a bottleneck: pointwise `C → C/r`, a grouped aggregation
//! with `cardinality` paths, pointwise `C/r → C`. The temporal aggregation is
//! the kernel-3 zero-padded convolution, which equals
//! `W₂X + W₃XA_t^f + W₁XA_t^b` (see [`temporal_stream_equivalence`]). The
//! semantic aggregation is a grouped pointwise map of `Z·A_s`, summing over
//! the K dynamic neighbours recomputed from the block input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{knn_semantic_edges, semantic_mix, temporal_adjacency, Edge};
use crate::init::uniform;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub width: usize,
    pub bottleneck: usize,
    pub cardinality: usize,
}

impl BlockShape {
    pub fn new(width: usize, bottleneck_ratio: usize, cardinality: usize) -> Result<Self> {
        if width == 0 || bottleneck_ratio == 0 || width % bottleneck_ratio != 0 {
            return Err(Error::Config(format!(
                "width {width} not divisible by bottleneck ratio {bottleneck_ratio}"
            )));
        }
        let bottleneck = width / bottleneck_ratio;
        if cardinality == 0 || bottleneck % cardinality != 0 {
            return Err(Error::Config(format!(
                "cardinality {cardinality} does not divide bottleneck width {bottleneck}"
            )));
        }
        Ok(Self {
            width,
            bottleneck,
            cardinality,
        })
    }
}

/// One bottleneck stream.
#[derive(Debug, Clone)]
pub struct StreamParams {
    /// `bottleneck × width`
    pub reduce: Tensor,
    /// `taps × (bottleneck/cardinality) × bottleneck`
    pub aggregate: Tensor,
    /// `width × bottleneck`
    pub expand: Tensor,
}

impl StreamParams {
    fn init<R: Rng>(rng: &mut R, shape: BlockShape, taps: usize) -> Self {
        let per_group = shape.bottleneck / shape.cardinality;
        Self {
            reduce: uniform(rng, &[shape.bottleneck, shape.width], shape.width),
            aggregate: uniform(rng, &[taps, per_group, shape.bottleneck], taps * per_group),
            expand: uniform(rng, &[shape.width, shape.bottleneck], shape.bottleneck),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.reduce"), self.reduce.clone()),
            (format!("{prefix}.aggregate"), self.aggregate.clone()),
            (format!("{prefix}.expand"), self.expand.clone()),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct GcnextParams {
    pub shape: BlockShape,
    pub temporal: StreamParams,
    /// `None` disables the semantic stream.
    pub semantic: Option<StreamParams>,
}

impl GcnextParams {
    pub fn init<R: Rng>(rng: &mut R, shape: BlockShape, semantic: bool) -> Self {
        let temporal = StreamParams::init(rng, shape, 3);
        let semantic = semantic.then(|| StreamParams::init(rng, shape, 1));
        Self {
            shape,
            temporal,
            semantic,
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = self.temporal.named(&format!("{prefix}.temporal"));
        if let Some(s) = &self.semantic {
            out.extend(s.named(&format!("{prefix}.semantic")));
        }
        out
    }
}

/// Un-activated edge convolution `W0·X + W1·X·A`.
pub fn edge_aggregate_linear(x: &Tensor, a: &Tensor, w0: &Tensor, w1: &Tensor) -> Result<Tensor> {
    let len = x.shape().get(1).copied().unwrap_or(0);
    if a.shape() != [len, len] {
        return Err(Error::dim("edge_aggregate", x.shape(), a.shape()));
    }
    w0.matmul(x)?.add(&w1.matmul(&x.matmul(a)?)?)
}

/// `relu(W0·X + W1·X·A)`.
pub fn edge_aggregate(x: &Tensor, a: &Tensor, w0: &Tensor, w1: &Tensor) -> Result<Tensor> {
    Ok(edge_aggregate_linear(x, a, w0, w1)?.relu())
}

/// One GCNeXt block on `C × L` features with the given semantic edges.
pub fn gcnext_forward(
    x: &Tensor,
    semantic_edges: &[Edge],
    params: &GcnextParams,
) -> Result<Tensor> {
    let shape = params.shape;
    if x.shape().len() != 2 || x.shape()[0] != shape.width {
        return Err(Error::Config(format!(
            "block expects width {}, got features of shape {:?}",
            shape.width,
            x.shape()
        )));
    }
    let len = x.shape()[1];
    let t = &params.temporal;
    let z = t.reduce.matmul(x)?.relu();
    let z = z.grouped_conv1d(&t.aggregate, shape.cardinality, 1)?.relu();
    let mut out = t.expand.matmul(&z)?.add(x)?;
    if let Some(s) = &params.semantic {
        let adjacency = semantic_mix(semantic_edges, len, 1.0)?;
        let z = s.reduce.matmul(x)?.relu();
        let z = z.sparse_mix(&adjacency)?;
        let z = z.grouped_conv1d(&s.aggregate, shape.cardinality, 0)?.relu();
        out = out.add(&s.expand.matmul(&z)?)?;
    }
    Ok(out.relu())
}

/// Max |a − b| between the temporal graph form
/// `W₂X + W₃XA_t^f + W₁XA_t^b` and the kernel-3 zero-padded convolution
/// with kernel slices `[W₁, W₂, W₃]`. Weights are `C × C` (out × in).
pub fn temporal_stream_equivalence(
    x: &Tensor,
    w1: &Tensor,
    w2: &Tensor,
    w3: &Tensor,
) -> Result<f64> {
    let (c, len) = match x.shape() {
        &[c, l] => (c, l),
        s => return Err(Error::dim("temporal_stream_equivalence", s, &[])),
    };
    for w in [w1, w2, w3] {
        if w.shape() != [c, c] {
            return Err(Error::dim(
                "temporal_stream_equivalence",
                x.shape(),
                w.shape(),
            ));
        }
    }
    let (forward, backward) = temporal_adjacency(len)?;
    let graph = w2
        .matmul(x)?
        .add(&w3.matmul(&x.matmul(&forward)?)?)?
        .add(&w1.matmul(&x.matmul(&backward)?)?)?;

    // Kernel layout is tap × in × out.
    let mut kernel = vec![0.0; 3 * c * c];
    for (tap, w) in [w1, w2, w3].iter().enumerate() {
        let wv = w.data();
        for co in 0..c {
            for ci in 0..c {
                kernel[(tap * c + ci) * c + co] = wv[co * c + ci];
            }
        }
    }
    let kernel = Tensor::new(&[3, c, c], kernel)?;
    let conv = x.grouped_conv1d(&kernel, 1, 1)?;

    let deviation = graph
        .data()
        .iter()
        .zip(conv.data().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(deviation)
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    /// Output of the first block, tapped by the node classifier.
    pub block1: Tensor,
    pub last: Tensor,
    /// Semantic edges used by each block, in block order.
    pub edges: Vec<Vec<Edge>>,
}

/// Applies the blocks in order, recomputing k-NN edges from each block's
/// input. `frozen` substitutes precomputed edges (one list per block); the
/// selection itself is not differentiable, so gradient checks pin it.
pub fn backbone_forward(
    x: &Tensor,
    blocks: &[GcnextParams],
    k: usize,
    frozen: Option<&[Vec<Edge>]>,
) -> Result<BackboneOutput> {
    if blocks.is_empty() {
        return Err(Error::Config("backbone needs at least one block".into()));
    }
    if let Some(f) = frozen {
        if f.len() != blocks.len() {
            return Err(Error::Contract(format!(
                "{} frozen edge lists for {} blocks",
                f.len(),
                blocks.len()
            )));
        }
    }
    let mut h = x.clone();
    let mut block1 = None;
    let mut edges = Vec::with_capacity(blocks.len());
    for (i, params) in blocks.iter().enumerate() {
        let e = match (frozen, params.semantic.is_some() && k > 0) {
            (Some(f), _) => f[i].clone(),
            (None, true) => knn_semantic_edges(&h.data(), h.shape()[0], k)?,
            (None, false) => Vec::new(),
        };
        h = gcnext_forward(&h, &e, params)?;
        edges.push(e);
        if i == 0 {
            block1 = Some(h.clone());
        }
    }
    Ok(BackboneOutput {
        block1: block1.expect("at least one block"),
        last: h,
        edges,
    })
}
