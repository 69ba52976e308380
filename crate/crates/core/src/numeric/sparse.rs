use serde::{Deserialize, Serialize};

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Weighted sparse adjacency stored in compressed-row form.
///
/// Entries are unique per `(source, target)` pair and sorted by source then
/// target. The `symmetric` flag is checked at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseAdjacency {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    symmetric: bool,
}

impl SparseAdjacency {
    pub fn from_edges(n: usize, mut edges: Vec<(usize, usize, f64)>, symmetric: bool) -> Result<Self> {
        for &(s, t, w) in &edges {
            if s >= n || t >= n {
                return Err(Error::param(format!(
                    "edge ({s}, {t}) out of range for {n} nodes"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Numeric(format!("edge ({s}, {t}) has weight {w}")));
            }
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = edges.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::param(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut indptr = vec![0usize; n + 1];
        for &(s, _, _) in &edges {
            indptr[s + 1] += 1;
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        let indices = edges.iter().map(|e| e.1).collect();
        let weights = edges.iter().map(|e| e.2).collect();
        let adj = Self {
            n,
            indptr,
            indices,
            weights,
            symmetric,
        };
        if symmetric {
            for (s, t, _) in adj.edges() {
                if !adj.has_edge(t, s) {
                    return Err(Error::param(format!(
                        "adjacency flagged symmetric but ({s}, {t}) has no reverse"
                    )));
                }
            }
        }
        Ok(adj)
    }

    /// Unweighted symmetric adjacency from undirected pairs (each given once or twice).
    pub fn from_undirected(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = std::collections::BTreeSet::new();
        for (a, b) in pairs {
            set.insert((a, b));
            set.insert((b, a));
        }
        Self::from_edges(n, set.into_iter().map(|(a, b)| (a, b, 1.0)).collect(), true)
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
            weights: Vec::new(),
            symmetric: true,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn row_weights(&self, i: usize) -> &[f64] {
        &self.weights[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn has_edge(&self, s: usize, t: usize) -> bool {
        s < self.n && self.neighbors(s).binary_search(&t).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |s| {
            self.neighbors(s)
                .iter()
                .zip(self.row_weights(s))
                .map(move |(&t, &w)| (s, t, w))
        })
    }

    /// Undirected edges with `source < target`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges().filter(|e| e.0 < e.1).map(|e| (e.0, e.1))
    }

    pub fn has_self_loops(&self) -> bool {
        self.edges().any(|(s, t, _)| s == t)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for (s, t, w) in self.edges() {
            m.set(s, t, w);
        }
        m
    }

    /// `self * b`, touching only stored entries.
    pub fn matmul_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.n {
            return Err(Error::Shape {
                op: "sparse matmul",
                left: (self.n, self.n),
                right: b.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.n, b.cols());
        for i in 0..self.n {
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            let out_row = out.row_mut(i);
            for p in lo..hi {
                let w = self.weights[p];
                for (o, v) in out_row.iter_mut().zip(b.row(self.indices[p])) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * b`.
    pub fn transpose_matmul_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.symmetric {
            return self.matmul_dense(b);
        }
        if b.rows() != self.n {
            return Err(Error::Shape {
                op: "sparse transpose matmul",
                left: (self.n, self.n),
                right: b.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.n, b.cols());
        for (s, t, w) in self.edges() {
            let src = b.row(s).to_vec();
            for (o, v) in out.row_mut(t).iter_mut().zip(&src) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}
