use std::rc::Rc;

use super::gemm::gemm;
use super::sparse::{BinnedPlan, SparseColumns};
use super::{conv, GradSink, Tensor};

/// How a tracked tensor was produced, with the inputs its backward rule needs.
pub(crate) enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddBias(Tensor, Tensor),
    Relu(Tensor),
    Sigmoid(Tensor),
    Square(Tensor),
    Sum(Tensor),
    MeanAxis {
        x: Tensor,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Concat {
        parts: Vec<Tensor>,
        outer: usize,
        inner: usize,
    },
    Slice {
        x: Tensor,
        outer: usize,
        len: usize,
        inner: usize,
        start: usize,
        end: usize,
    },
    Transpose(Tensor),
    Reshape(Tensor),
    SparseMix(Tensor, Rc<SparseColumns>),
    GroupedConv1d {
        x: Tensor,
        w: Tensor,
        groups: usize,
        padding: usize,
    },
    BinnedLinear(Tensor, Tensor, Rc<BinnedPlan>),
    WeightedBce {
        p: Tensor,
        targets: Rc<Vec<f64>>,
        weights: Rc<Vec<f64>>,
        eps: f64,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::AddBias(x, b) => vec![x, b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Square(x)
            | Op::Sum(x)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::SparseMix(x, _) => vec![x],
            Op::MeanAxis { x, .. } | Op::Slice { x, .. } => vec![x],
            Op::Concat { parts, .. } => parts.iter().collect(),
            Op::GroupedConv1d { x, w, .. } => vec![x, w],
            Op::BinnedLinear(rows, w, _) => vec![rows, w],
            Op::WeightedBce { p, .. } => vec![p],
        }
    }

    /// Pushes `g = ∂loss/∂out` back to the inputs of `out`.
    pub(crate) fn backward(&self, out: &Tensor, g: &[f64], sink: &mut GradSink<'_>) {
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if let Some(da) = sink.slot(a) {
                    gemm(m, n, k, g, false, &b.data(), true, da, 1.0);
                }
                if let Some(db) = sink.slot(b) {
                    gemm(k, m, n, &a.data(), true, g, false, db, 1.0);
                }
            }
            Op::Add(a, b) => {
                for t in [a, b] {
                    if let Some(d) = sink.slot(t) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = sink.slot(a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = sink.slot(b) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(d) = sink.slot(a) {
                    let bv = b.data();
                    for ((d, g), y) in d.iter_mut().zip(g).zip(bv.iter()) {
                        *d += g * y;
                    }
                }
                if let Some(d) = sink.slot(b) {
                    let av = a.data();
                    for ((d, g), x) in d.iter_mut().zip(g).zip(av.iter()) {
                        *d += g * x;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(d) = sink.slot(x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
                }
            }
            Op::AddBias(x, b) => {
                let cols = b.numel();
                if let Some(d) = sink.slot(x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = sink.slot(b) {
                    for row in g.chunks(cols) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(d) = sink.slot(x) {
                    let xv = x.data();
                    for ((d, g), v) in d.iter_mut().zip(g).zip(xv.iter()) {
                        if *v > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = sink.slot(x) {
                    let yv = out.data();
                    for ((d, g), y) in d.iter_mut().zip(g).zip(yv.iter()) {
                        *d += g * y * (1.0 - y);
                    }
                }
            }
            Op::Square(x) => {
                if let Some(d) = sink.slot(x) {
                    let xv = x.data();
                    for ((d, g), v) in d.iter_mut().zip(g).zip(xv.iter()) {
                        *d += 2.0 * v * g;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = sink.slot(x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MeanAxis {
                x,
                outer,
                len,
                inner,
            } => {
                if let Some(d) = sink.slot(x) {
                    let scale = 1.0 / *len as f64;
                    for o in 0..*outer {
                        for a in 0..*len {
                            let base = (o * len + a) * inner;
                            for i in 0..*inner {
                                d[base + i] += g[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                inner,
            } => {
                let total: usize = parts.iter().map(|p| p.numel() / (outer * inner)).sum();
                let mut offset = 0;
                for p in parts {
                    let len = p.numel() / (outer * inner);
                    if let Some(d) = sink.slot(p) {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for (dv, gv) in d[dst..dst + len * inner]
                                .iter_mut()
                                .zip(&g[src..src + len * inner])
                            {
                                *dv += gv;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice {
                x,
                outer,
                len,
                inner,
                start,
                end,
            } => {
                if let Some(d) = sink.slot(x) {
                    let width = (end - start) * inner;
                    for o in 0..*outer {
                        let dst = (o * len + start) * inner;
                        for (dv, gv) in d[dst..dst + width]
                            .iter_mut()
                            .zip(&g[o * width..(o + 1) * width])
                        {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(d) = sink.slot(x) {
                    let (rows, cols) = (x.shape()[0], x.shape()[1]);
                    for i in 0..rows {
                        for j in 0..cols {
                            d[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = sink.slot(x) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::SparseMix(x, cols) => {
                if let Some(d) = sink.slot(x) {
                    cols.backward(x.shape()[0], g, d);
                }
            }
            Op::GroupedConv1d {
                x,
                w,
                groups,
                padding,
            } => {
                let geom = conv::Geometry::new(x.shape(), w.shape(), *groups, *padding)
                    .expect("validated at forward");
                if let Some(dx) = sink.slot(x) {
                    conv::backward_input(&geom, &w.data(), g, dx);
                }
                if let Some(dw) = sink.slot(w) {
                    conv::backward_weight(&geom, &x.data(), g, dw);
                }
            }
            Op::BinnedLinear(rows, w, plan) => {
                let features = rows.shape()[1];
                let hidden = w.shape()[1];
                let dq = plan.scatter(g, hidden);
                let wr = plan.permute_weight(&w.data(), features, hidden);
                let width = plan.bins() * hidden;
                if let Some(drows) = sink.slot(rows) {
                    gemm(
                        plan.nodes(),
                        width,
                        features,
                        &dq,
                        false,
                        &wr,
                        true,
                        drows,
                        1.0,
                    );
                }
                if let Some(dw) = sink.slot(w) {
                    let mut dwr = vec![0.0; features * width];
                    gemm(
                        features,
                        plan.nodes(),
                        width,
                        &rows.data(),
                        true,
                        &dq,
                        false,
                        &mut dwr,
                        0.0,
                    );
                    plan.unpermute_weight_into(&dwr, features, hidden, dw);
                }
            }
            Op::WeightedBce {
                p,
                targets,
                weights,
                eps,
            } => {
                if let Some(d) = sink.slot(p) {
                    let n = targets.len() as f64;
                    let pv = p.data();
                    for i in 0..targets.len() {
                        let q = pv[i];
                        if q < *eps || q > 1.0 - eps {
                            continue;
                        }
                        let y = targets[i];
                        d[i] += g[0] * weights[i] / n * (-y / q + (1.0 - y) / (1.0 - q));
                    }
                }
            }
        }
    }
}
