use crate::error::{Error, Result};

/// A sparse `rows × cols` matrix stored column by column.
///
/// Multiplying a `C × rows` tensor on the right by it mixes node features:
/// output column `j` is `Σ w · x_i` over the `(i, w)` entries of column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumns {
    rows: usize,
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseColumns {
    pub fn new(rows: usize, cols: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if let Some(&(i, _)) = cols.iter().flatten().find(|(i, _)| *i >= rows) {
            return Err(Error::Data(format!(
                "sparse entry row {i} outside 0..{rows}"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j]
    }

    /// Dense row-major `rows × cols` copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.cols.len();
        let mut dense = vec![0.0; self.rows * n];
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, w) in col {
                dense[i * n + j] += w;
            }
        }
        dense
    }

    pub(crate) fn forward(&self, channels: usize, x: &[f64]) -> Vec<f64> {
        let n = self.cols.len();
        let mut out = vec![0.0; channels * n];
        for c in 0..channels {
            let xr = &x[c * self.rows..(c + 1) * self.rows];
            let or = &mut out[c * n..(c + 1) * n];
            for (o, col) in or.iter_mut().zip(&self.cols) {
                *o = col.iter().map(|&(i, w)| w * xr[i]).sum();
            }
        }
        out
    }

    pub(crate) fn backward(&self, channels: usize, g: &[f64], dx: &mut [f64]) {
        let n = self.cols.len();
        for c in 0..channels {
            let gr = &g[c * n..(c + 1) * n];
            let dr = &mut dx[c * self.rows..(c + 1) * self.rows];
            for (gv, col) in gr.iter().zip(&self.cols) {
                for &(i, w) in col {
                    dr[i] += w * gv;
                }
            }
        }
    }
}

/// Sparse weighted gathers of node rows into bins, fused with a linear map.
///
/// Output row `r` is `Σ w · (x_node · W_bin)` over its `(bin, node, w)`
/// entries, where `x_node` is a row of an `nodes × C` tensor and `W_bin` is
/// the `bin`-th `C × H` block of a `(bins·C) × H` weight. This equals
/// building the `rows × (bins·C)` gathered matrix explicitly and multiplying
/// by the weight, at a fraction of the cost when each row touches few nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedPlan {
    nodes: usize,
    bins: usize,
    rows: Vec<Vec<(u32, u32, f64)>>,
}

impl BinnedPlan {
    pub fn new(nodes: usize, bins: usize, rows: Vec<Vec<(u32, u32, f64)>>) -> Result<Self> {
        for &(b, i, _) in rows.iter().flatten() {
            if b as usize >= bins || i as usize >= nodes {
                return Err(Error::Data(format!(
                    "binned entry (bin {b}, node {i}) outside {bins} bins × {nodes} nodes"
                )));
            }
        }
        Ok(Self { nodes, bins, rows })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn entries(&self, row: usize) -> &[(u32, u32, f64)] {
        &self.rows[row]
    }

    /// `(bins·C) × H` row-major weight to `C × (bins·H)`.
    pub(crate) fn permute_weight(&self, w: &[f64], features: usize, hidden: usize) -> Vec<f64> {
        let width = self.bins * hidden;
        let mut wr = vec![0.0; features * width];
        for b in 0..self.bins {
            for c in 0..features {
                let src = &w[(b * features + c) * hidden..(b * features + c + 1) * hidden];
                wr[c * width + b * hidden..c * width + (b + 1) * hidden].copy_from_slice(src);
            }
        }
        wr
    }

    pub(crate) fn unpermute_weight_into(
        &self,
        wr: &[f64],
        features: usize,
        hidden: usize,
        dw: &mut [f64],
    ) {
        let width = self.bins * hidden;
        for b in 0..self.bins {
            for c in 0..features {
                let dst = &mut dw[(b * features + c) * hidden..(b * features + c + 1) * hidden];
                let src = &wr[c * width + b * hidden..c * width + (b + 1) * hidden];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
    }

    /// Gathers `q` (`nodes × (bins·H)`) into `rows × H`.
    pub(crate) fn gather(&self, q: &[f64], hidden: usize) -> Vec<f64> {
        let width = self.bins * hidden;
        let mut out = vec![0.0; self.rows.len() * hidden];
        for (row, entries) in out.chunks_mut(hidden).zip(&self.rows) {
            for &(b, i, w) in entries {
                let off = i as usize * width + b as usize * hidden;
                row.iter_mut()
                    .zip(&q[off..off + hidden])
                    .for_each(|(o, v)| *o += w * v);
            }
        }
        out
    }

    /// Transpose of [`Self::gather`]: `rows × H` back to `nodes × (bins·H)`.
    pub(crate) fn scatter(&self, g: &[f64], hidden: usize) -> Vec<f64> {
        let width = self.bins * hidden;
        let mut dq = vec![0.0; self.nodes * width];
        for (row, entries) in g.chunks(hidden).zip(&self.rows) {
            for &(b, i, w) in entries {
                let off = i as usize * width + b as usize * hidden;
                dq[off..off + hidden]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(d, v)| *d += w * v);
            }
        }
        dq
    }
}
