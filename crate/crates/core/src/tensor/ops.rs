use std::rc::Rc;

use super::autograd::Op;
use super::conv::{self, Geometry};
use super::gemm::gemm;
use super::sparse::{BinnedPlan, SparseColumns};
use super::Tensor;
use crate::error::{Error, Result};

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// (outer, len, inner) around `axis`.
fn split_axis(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(op, shape, &[axis]));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl Tensor {
    fn require_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::dim(op, s, &[])),
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(self.shape().to_vec(), data, op)
    }

    fn zip_with(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_op(self.shape().to_vec(), data, op)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_2d("matmul")?;
        let (k2, n) = other.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(), other.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.data(),
            false,
            &other.data(),
            false,
            &mut out,
            0.0,
        );
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        Ok(self.zip_with(other, Op::Add(self.clone(), other.clone()), |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        Ok(self.zip_with(other, Op::Sub(self.clone(), other.clone()), |a, b| a - b))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        Ok(self.zip_with(other, Op::Mul(self.clone(), other.clone()), |a, b| a * b))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(Op::Scale(self.clone(), s), |v| v * s)
    }

    /// Adds a length-`n` bias to every row of an `m × n` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, n) = self.require_2d("add_bias")?;
        if bias.shape() != [n] {
            return Err(Error::dim("add_bias", self.shape(), bias.shape()));
        }
        let b = bias.data();
        let data = self
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b.iter()).map(|(x, b)| x + b))
            .collect();
        drop(b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::AddBias(self.clone(), bias.clone()),
        ))
    }

    pub fn relu(&self) -> Tensor {
        self.map(Op::Relu(self.clone()), |v| if v < 0.0 { 0.0 } else { v })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(Op::Sigmoid(self.clone()), sigmoid)
    }

    pub fn square(&self) -> Tensor {
        self.map(Op::Square(self.clone()), |v| v * v)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s], Op::Sum(self.clone()))
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        Ok(self.sum().scale(1.0 / self.numel() as f64))
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_axis(self.shape(), axis, "mean_axis")?;
        if len == 0 {
            return Err(Error::dim("mean_axis", self.shape(), &[axis]));
        }
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        drop(x);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            shape,
            out,
            Op::MeanAxis {
                x: self.clone(),
                outer,
                len,
                inner,
            },
        ))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (outer, _, inner) = split_axis(first.shape(), axis, "concat")?;
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != first.shape().len()
                || s[..axis] != first.shape()[..axis]
                || s[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(Error::dim("concat", first.shape(), s));
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        let views: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (p, v) in parts.iter().zip(&views) {
                let w = p.shape()[axis] * inner;
                out.extend_from_slice(&v[o * w..(o + 1) * w]);
            }
        }
        drop(views);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
            },
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_axis(self.shape(), axis, "slice")?;
        if start > end || end > len {
            return Err(Error::dim("slice", self.shape(), &[start, end]));
        }
        let x = self.data();
        let width = (end - start) * inner;
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            out.extend_from_slice(&x[base..base + width]);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = end - start;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Slice {
                x: self.clone(),
                outer,
                len,
                inner,
                start,
                end,
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (rows, cols) = self.require_2d("transpose")?;
        let x = self.data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = x[i * cols + j];
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![cols, rows],
            out,
            Op::Transpose(self.clone()),
        ))
    }

    /// Same row-major data under a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::dim("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// `self · S` for a `C × rows` tensor and a sparse `rows × cols` matrix.
    pub fn sparse_mix(&self, mix: &Rc<SparseColumns>) -> Result<Tensor> {
        let (channels, len) = self.require_2d("sparse_mix")?;
        if len != mix.rows() {
            return Err(Error::dim(
                "sparse_mix",
                self.shape(),
                &[mix.rows(), mix.cols()],
            ));
        }
        let out = mix.forward(channels, &self.data());
        Ok(Tensor::from_op(
            vec![channels, mix.cols()],
            out,
            Op::SparseMix(self.clone(), Rc::clone(mix)),
        ))
    }

    /// Grouped, zero-padded 1-D cross-correlation; see the `conv` module.
    pub fn grouped_conv1d(&self, w: &Tensor, groups: usize, padding: usize) -> Result<Tensor> {
        let geom = Geometry::new(self.shape(), w.shape(), groups, padding)?;
        let out = conv::forward(&geom, &self.data(), &w.data());
        Ok(Tensor::from_op(
            vec![geom.c_out, geom.out_len],
            out,
            Op::GroupedConv1d {
                x: self.clone(),
                w: w.clone(),
                groups,
                padding,
            },
        ))
    }

    /// Fused gather-and-project: `self` is `nodes × C`, `w` is
    /// `(bins·C) × H`; see [`BinnedPlan`].
    pub fn binned_linear(&self, w: &Tensor, plan: &Rc<BinnedPlan>) -> Result<Tensor> {
        let (nodes, features) = self.require_2d("binned_linear")?;
        let (wrows, hidden) = w.require_2d("binned_linear")?;
        if nodes != plan.nodes() || wrows != plan.bins() * features {
            return Err(Error::dim("binned_linear", self.shape(), w.shape()));
        }
        let wr = plan.permute_weight(&w.data(), features, hidden);
        let width = plan.bins() * hidden;
        let mut q = vec![0.0; nodes * width];
        gemm(
            nodes,
            features,
            width,
            &self.data(),
            false,
            &wr,
            false,
            &mut q,
            0.0,
        );
        let out = plan.gather(&q, hidden);
        Ok(Tensor::from_op(
            vec![plan.len(), hidden],
            out,
            Op::BinnedLinear(self.clone(), w.clone(), Rc::clone(plan)),
        ))
    }

    /// `(1/n) Σ w_i · BCE(p_i, y_i)` with probabilities clipped to
    /// `[eps, 1 − eps]`.
    pub fn weighted_bce(&self, targets: &[f64], weights: &[f64], eps: f64) -> Result<Tensor> {
        let n = self.numel();
        if targets.len() != n || weights.len() != n {
            return Err(Error::dim(
                "weighted_bce",
                self.shape(),
                &[targets.len(), weights.len()],
            ));
        }
        if n == 0 {
            return Err(Error::Contract("cross entropy over zero elements".into()));
        }
        let p = self.data();
        let total: f64 = (0..n)
            .map(|i| {
                let q = p[i].clamp(eps, 1.0 - eps);
                let y = targets[i];
                -weights[i] * (y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum();
        drop(p);
        Ok(Tensor::from_op(
            Vec::new(),
            vec![total / n as f64],
            Op::WeightedBce {
                p: self.clone(),
                targets: Rc::new(targets.to_vec()),
                weights: Rc::new(weights.to_vec()),
                eps,
            },
        ))
    }
}
