//! Snippet graphs: fixed temporal edges and dynamic semantic k-NN edges.
//!
//! Nodes are zero-based snippet indices. Adjacencies follow the column
//! aggregation convention: `A[i, j] = 1` means node `j` aggregates the
//! feature of node `i`, so `X · A` puts the aggregated features of node `j`
//! in column `j`. An edge `(src, dst)` is stored the same way.

use std::fmt::Write as _;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{SparseColumns, Tensor};

/// Directed `(source, target)` pair; the target aggregates the source.
pub type Edge = (usize, usize);

/// Temporal adjacencies plus the semantic edges of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoGraph {
    pub len: usize,
    pub k: usize,
    pub semantic: Vec<Vec<Edge>>,
}

impl VideoGraph {
    pub fn new(len: usize, k: usize) -> Self {
        Self {
            len,
            k,
            semantic: Vec::new(),
        }
    }

    pub fn export(&self) -> GraphExport {
        GraphExport {
            len: self.len,
            k: self.k,
            layers: self
                .semantic
                .iter()
                .map(|l| l.iter().map(|&(s, d)| [s, d]).collect())
                .collect(),
        }
    }
}

/// `(A_t_f, A_t_b)` as dense `L × L` constants.
///
/// Column `j` of `A_t_f` is the indicator of node `j + 1` (zero for the last
/// node) and column `j` of `A_t_b` the indicator of node `j − 1` (zero for
/// the first), so `A_t_f = A_t_bᵀ`.
pub fn temporal_adjacency(len: usize) -> Result<(Tensor, Tensor)> {
    let (f, b) = temporal_mixes(len)?;
    Ok((
        Tensor::new(&[len, len], f.to_dense())?,
        Tensor::new(&[len, len], b.to_dense())?,
    ))
}

/// Sparse forms of [`temporal_adjacency`].
pub fn temporal_mixes(len: usize) -> Result<(Rc<SparseColumns>, Rc<SparseColumns>)> {
    if len == 0 {
        return Err(Error::EmptyGraph);
    }
    let forward = (0..len)
        .map(|j| {
            if j + 1 < len {
                vec![(j + 1, 1.0)]
            } else {
                vec![]
            }
        })
        .collect();
    let backward = (0..len)
        .map(|j| if j > 0 { vec![(j - 1, 1.0)] } else { vec![] })
        .collect();
    Ok((
        Rc::new(SparseColumns::new(len, forward)?),
        Rc::new(SparseColumns::new(len, backward)?),
    ))
}

/// For every node `i`, edges `(n_i(1), i) … (n_i(K), i)` to its `K` nearest
/// other nodes by Euclidean distance between feature columns of the
/// `C × L` matrix `x`. Ties go to the smaller node index.
pub fn knn_semantic_edges(x: &[f64], channels: usize, k: usize) -> Result<Vec<Edge>> {
    if channels == 0 || x.len() % channels != 0 {
        return Err(Error::dim("knn_semantic_edges", &[x.len()], &[channels]));
    }
    let len = x.len() / channels;
    if len == 0 {
        return Err(Error::EmptyGraph);
    }
    if k >= len {
        return Err(Error::Config(format!(
            "{k} neighbours requested but only {len} nodes"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite snippet feature".into()));
    }
    let dist = pairwise_sq_distances(x, channels, len);
    let mut edges = Vec::with_capacity(k * len);
    let mut order: Vec<usize> = Vec::with_capacity(len);
    for i in 0..len {
        order.clear();
        order.extend((0..len).filter(|&j| j != i));
        let row = &dist[i * len..(i + 1) * len];
        let by_distance = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
        if k < order.len() {
            order.select_nth_unstable_by(k, by_distance);
        }
        order[..k].sort_by(by_distance);
        edges.extend(order[..k].iter().map(|&j| (j, i)));
    }
    Ok(edges)
}

/// Squared distances, exactly symmetric.
fn pairwise_sq_distances(x: &[f64], channels: usize, len: usize) -> Vec<f64> {
    let mut dist = vec![0.0; len * len];
    for c in 0..channels {
        let row = &x[c * len..(c + 1) * len];
        for i in 0..len {
            for j in i + 1..len {
                let d = row[i] - row[j];
                dist[i * len + j] += d * d;
            }
        }
    }
    for i in 0..len {
        for j in i + 1..len {
            dist[j * len + i] = dist[i * len + j];
        }
    }
    dist
}

fn check_edges(edges: &[Edge], len: usize) -> Result<()> {
    if let Some(&(s, d)) = edges.iter().find(|(s, d)| *s >= len || *d >= len) {
        return Err(Error::Data(format!("edge ({s}, {d}) outside 0..{len}")));
    }
    Ok(())
}

/// Dense `L × L` semantic adjacency with `A[i, j] = 1` iff `(i, j)` is an edge.
pub fn semantic_adjacency(edges: &[Edge], len: usize) -> Result<Tensor> {
    Tensor::new(&[len, len], semantic_mix(edges, len, 1.0)?.to_dense())
}

/// Sparse semantic adjacency scaled by `weight`: `1` sums neighbours,
/// `1/K` averages them.
pub fn semantic_mix(edges: &[Edge], len: usize, weight: f64) -> Result<Rc<SparseColumns>> {
    check_edges(edges, len)?;
    let mut cols = vec![Vec::new(); len];
    for &(s, d) in edges {
        cols[d].push((s, weight));
    }
    Ok(Rc::new(SparseColumns::new(len, cols)?))
}

/// JSON shape of `export-graph`: `{"L", "K", "layers": [[[src, dst], …], …]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    #[serde(rename = "L")]
    pub len: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub layers: Vec<Vec<[usize; 2]>>,
}

impl GraphExport {
    /// Graphviz rendering: temporal chain plus one colour per layer.
    pub fn to_dot(&self) -> String {
        const COLORS: [&str; 6] = ["red", "blue", "darkgreen", "orange", "purple", "brown"];
        let mut s = String::from("digraph video {\n  rankdir=LR;\n");
        for i in 0..self.len {
            let _ = writeln!(s, "  n{i} [label=\"{i}\"];");
        }
        for i in 1..self.len {
            let _ = writeln!(s, "  n{} -> n{} [dir=both, color=gray];", i - 1, i);
        }
        for (layer, edges) in self.layers.iter().enumerate() {
            let color = COLORS[layer % COLORS.len()];
            for [src, dst] in edges {
                let _ = writeln!(
                    s,
                    "  n{src} -> n{dst} [color={color}, label=\"b{layer}\", constraint=false];"
                );
            }
        }
        s.push_str("}\n");
        s
    }
}
