//! Grouped 1-D cross-correlation over the temporal axis.
//!
//! Input is `C_in × L`, weight is `k × (C_in/g) × C_out`, output is
//! `C_out × (L + 2p − k + 1)`. Output channel `co` belongs to group
//! `co / (C_out/g)` and only reads that group's input channels.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub out_len: usize,
    pub kernel: usize,
    pub groups: usize,
    pub padding: usize,
}

impl Geometry {
    pub fn new(x: &[usize], w: &[usize], groups: usize, padding: usize) -> Result<Self> {
        if x.len() != 2 || w.len() != 3 {
            return Err(Error::dim("grouped_conv1d", x, w));
        }
        let (c_in, len) = (x[0], x[1]);
        let (kernel, per_group, c_out) = (w[0], w[1], w[2]);
        if groups == 0 || c_in % groups != 0 {
            return Err(Error::Config(format!(
                "{c_in} input channels not divisible into {groups} groups"
            )));
        }
        if c_out % groups != 0 {
            return Err(Error::Config(format!(
                "{c_out} output channels not divisible into {groups} groups"
            )));
        }
        if per_group != c_in / groups {
            return Err(Error::dim("grouped_conv1d", x, w));
        }
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {kernel} must be odd")));
        }
        let padded = len + 2 * padding;
        if padded < kernel {
            return Err(Error::dim("grouped_conv1d", x, w));
        }
        Ok(Self {
            c_in,
            c_out,
            len,
            out_len: padded - kernel + 1,
            kernel,
            groups,
            padding,
        })
    }

    fn per_group_in(&self) -> usize {
        self.c_in / self.groups
    }

    fn per_group_out(&self) -> usize {
        self.c_out / self.groups
    }

    /// Output positions `t` for which input `t + tap − padding` exists.
    fn valid(&self, tap: usize) -> std::ops::Range<usize> {
        let shift = tap as isize - self.padding as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (self.len as isize - shift).clamp(0, self.out_len as isize) as usize;
        lo.min(hi)..hi
    }

    /// Visits every (tap, local input, output channel, input channel) weight.
    fn for_each_weight(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (pin, pout) = (self.per_group_in(), self.per_group_out());
        for tap in 0..self.kernel {
            for ci in 0..pin {
                for co in 0..self.c_out {
                    let cin = (co / pout) * pin + ci;
                    f((tap * pin + ci) * self.c_out + co, co, cin);
                }
            }
        }
    }
}

pub(crate) fn forward(g: &Geometry, x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.c_out * g.out_len];
    g.for_each_weight(|widx, co, cin| {
        let wv = w[widx];
        if wv == 0.0 {
            return;
        }
        let tap = widx / (g.per_group_in() * g.c_out);
        let range = g.valid(tap);
        let shift = tap as isize - g.padding as isize;
        let orow = &mut out[co * g.out_len..(co + 1) * g.out_len];
        let xrow = &x[cin * g.len..(cin + 1) * g.len];
        for t in range {
            orow[t] += wv * xrow[(t as isize + shift) as usize];
        }
    });
    out
}

pub(crate) fn backward_input(g: &Geometry, w: &[f64], grad: &[f64], dx: &mut [f64]) {
    g.for_each_weight(|widx, co, cin| {
        let wv = w[widx];
        let tap = widx / (g.per_group_in() * g.c_out);
        let shift = tap as isize - g.padding as isize;
        let grow = &grad[co * g.out_len..(co + 1) * g.out_len];
        let drow = &mut dx[cin * g.len..(cin + 1) * g.len];
        for t in g.valid(tap) {
            drow[(t as isize + shift) as usize] += wv * grow[t];
        }
    });
}

pub(crate) fn backward_weight(g: &Geometry, x: &[f64], grad: &[f64], dw: &mut [f64]) {
    g.for_each_weight(|widx, co, cin| {
        let tap = widx / (g.per_group_in() * g.c_out);
        let shift = tap as isize - g.padding as isize;
        let grow = &grad[co * g.out_len..(co + 1) * g.out_len];
        let xrow = &x[cin * g.len..(cin + 1) * g.len];
        dw[widx] += g
            .valid(tap)
            .map(|t| grow[t] * xrow[(t as isize + shift) as usize])
            .sum::<f64>();
    });
}
