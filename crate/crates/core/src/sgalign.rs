//! Anchors and sub-graph alignment.
//!
//! Each anchor `(t_s, t_e)` is turned into `τ` feature vectors by sampling
//! `T = τ·s` evenly spaced positions `t_s + k·d/T` (with `d = t_e − t_s` and
//! `s = max(1, ⌊d/τ⌋)`), linearly interpolating the node features there and
//! averaging consecutive runs of `s` samples. Because the result is a fixed
//! weighted sum of node features, it is stored as a sparse plan and applied
//! as a linear map, and every covered node receives gradient.
//!
//! The aligned feature of an anchor concatenates `τ1` vectors from the
//! temporal graph with `τ2` vectors from the semantic graph, where every
//! node has been replaced by the mean of its dynamic neighbours.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{semantic_mix, Edge};
use crate::tensor::{BinnedPlan, SparseColumns, Tensor};

/// Candidate segment in snippet indices, `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Anchor {
    pub start: usize,
    pub end: usize,
}

impl Anchor {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn duration(&self) -> usize {
        self.end - self.start
    }
}

/// All anchors with `0 < t_s < t_e < L` and `t_e − t_s < D`, ordered
/// lexicographically by `(t_s, t_e)`.
pub fn enumerate_anchors(len: usize, max_duration: usize) -> Vec<Anchor> {
    let mut anchors = Vec::new();
    for start in 1..len {
        for end in start + 1..len.min(start + max_duration) {
            anchors.push(Anchor::new(start, end));
        }
    }
    anchors
}

/// [`enumerate_anchors`] restricted to anchors starting inside the first
/// `valid` snippets, so padding-only anchors are skipped.
pub fn enumerate_valid_anchors(len: usize, max_duration: usize, valid: usize) -> Vec<Anchor> {
    enumerate_anchors(len, max_duration)
        .into_iter()
        .filter(|a| a.start < valid)
        .collect()
}

/// Interpolation weights of one anchor: for each of the `τ` bins, the
/// `(node, weight)` pairs whose weighted sum is that bin's vector.
pub fn interp_weights(anchor: Anchor, tau: usize, len: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if anchor.start >= anchor.end || anchor.end >= len {
        return Err(Error::Contract(format!(
            "anchor ({}, {}) invalid for {len} snippets",
            anchor.start, anchor.end
        )));
    }
    if tau == 0 {
        return Err(Error::Contract("resolution must be at least 1".into()));
    }
    let d = anchor.duration();
    let per_bin = (d / tau).max(1);
    let samples = tau * per_bin;
    let last = (len - 1) as f64;
    let mut bins = Vec::with_capacity(tau);
    for bin in 0..tau {
        let mut acc: Vec<(usize, f64)> = Vec::with_capacity(per_bin + 1);
        let mut add = |node: usize, w: f64| match acc.iter_mut().find(|(n, _)| *n == node) {
            Some((_, v)) => *v += w,
            None => acc.push((node, w)),
        };
        for k in bin * per_bin..(bin + 1) * per_bin {
            let idx = (anchor.start as f64 + (k * d) as f64 / samples as f64).clamp(0.0, last);
            let lo = idx.floor();
            let frac = idx - lo;
            let share = 1.0 / per_bin as f64;
            if frac == 0.0 {
                add(lo as usize, share);
            } else {
                add(lo as usize, (1.0 - frac) * share);
                add((lo as usize + 1).min(len - 1), frac * share);
            }
        }
        acc.sort_by_key(|(n, _)| *n);
        bins.push(acc);
    }
    debug_assert!(samples > 0);
    Ok(bins)
}

/// `τ·C` aligned vector of one anchor from `C × L` features.
pub fn interp_rescale(x: &Tensor, anchor: Anchor, tau: usize) -> Result<Tensor> {
    let (c, len) = match x.shape() {
        &[c, l] => (c, l),
        s => return Err(Error::dim("interp_rescale", s, &[])),
    };
    let mix = Rc::new(SparseColumns::new(len, interp_weights(anchor, tau, len)?)?);
    x.sparse_mix(&mix)?.transpose()?.reshape(&[tau * c])
}

/// Interpolation plan for a fixed anchor set, resolution and length.
#[derive(Debug, Clone)]
pub struct AlignPlan {
    len: usize,
    tau: usize,
    bins: Vec<Vec<Vec<(usize, f64)>>>,
}

impl AlignPlan {
    pub fn new(anchors: &[Anchor], tau: usize, len: usize) -> Result<Self> {
        let bins = anchors
            .iter()
            .map(|&a| interp_weights(a, tau, len))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { len, tau, bins })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn anchors(&self) -> usize {
        self.bins.len()
    }

    /// `L × (J·τ)` sparse matrix; column `j·τ + k` is bin `k` of anchor `j`.
    pub fn sparse(&self) -> Result<Rc<SparseColumns>> {
        let cols = self.bins.iter().flatten().cloned().collect();
        Ok(Rc::new(SparseColumns::new(self.len, cols)?))
    }

    /// Plan for [`Tensor::binned_linear`] over `L × C` node rows.
    pub fn binned(&self) -> Result<Rc<BinnedPlan>> {
        let rows = self
            .bins
            .iter()
            .map(|anchor| {
                anchor
                    .iter()
                    .enumerate()
                    .flat_map(|(k, bin)| bin.iter().map(move |&(n, w)| (k as u32, n as u32, w)))
                    .collect()
            })
            .collect();
        Ok(Rc::new(BinnedPlan::new(self.len, self.tau, rows)?))
    }

    /// `J × τC` aligned features of `C × L` input.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.shape()[0];
        if x.shape() != [c, self.len] {
            return Err(Error::dim("align", x.shape(), &[c, self.len]));
        }
        x.sparse_mix(&self.sparse()?)?
            .transpose()?
            .reshape(&[self.anchors(), self.tau * c])
    }
}

/// Mean-of-neighbours mixing matrix; every node needs at least one in-edge.
pub fn smoothing_mix(edges: &[Edge], len: usize) -> Result<Rc<SparseColumns>> {
    let mut degree = vec![0usize; len];
    for &(_, d) in edges {
        if d < len {
            degree[d] += 1;
        }
    }
    if let Some(node) = degree.iter().position(|&d| d == 0) {
        return Err(Error::Contract(format!(
            "node {node} has no semantic neighbours"
        )));
    }
    let base = semantic_mix(edges, len, 1.0)?;
    let cols = (0..len)
        .map(|j| {
            base.column(j)
                .iter()
                .map(|&(i, w)| (i, w / degree[j] as f64))
                .collect()
        })
        .collect();
    Ok(Rc::new(SparseColumns::new(len, cols)?))
}

/// Replaces each node's feature by the mean of its semantic neighbours.
pub fn semantic_smooth(x: &Tensor, edges: &[Edge]) -> Result<Tensor> {
    let len = x.shape().get(1).copied().unwrap_or(0);
    x.sparse_mix(&smoothing_mix(edges, len)?)
}

/// `J × (τ1 + τ2)·C` sub-graph features; `τ2 = 0` keeps the temporal part
/// only.
pub fn sgalign_forward(
    features: &Tensor,
    edges: &[Edge],
    anchors: &[Anchor],
    tau_temporal: usize,
    tau_semantic: usize,
) -> Result<Tensor> {
    let len = features.shape().get(1).copied().unwrap_or(0);
    let temporal = AlignPlan::new(anchors, tau_temporal, len)?.apply(features)?;
    if tau_semantic == 0 {
        return Ok(temporal);
    }
    let smoothed = semantic_smooth(features, edges)?;
    let semantic = AlignPlan::new(anchors, tau_semantic, len)?.apply(&smoothed)?;
    Tensor::concat(&[temporal, semantic], 1)
}
