//! Spatial nearest-neighbor graphs, the GCN propagation operator and
//! stochastic augmented views.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultiSliceDataset;
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, SeededRng, SparseAdjacency};

pub const DEFAULT_SNN_K: usize = 6;

/// Symmetric, unweighted, self-loop-free spatial graph over all spots.
#[derive(Debug, Clone)]
pub struct SnnGraph {
    adjacency: SparseAdjacency,
    membership: Vec<usize>,
    normalized: Arc<SparseAdjacency>,
}

impl SnnGraph {
    pub fn new(adjacency: SparseAdjacency, membership: Vec<usize>) -> Result<Self> {
        if !adjacency.is_symmetric() || adjacency.has_self_loops() {
            return Err(Error::param("SNN adjacency must be symmetric without self-loops"));
        }
        if membership.len() != adjacency.node_count() {
            return Err(Error::param(format!(
                "{} membership entries for {} nodes",
                membership.len(),
                adjacency.node_count()
            )));
        }
        if let Some((s, t, _)) = adjacency.edges().find(|&(s, t, _)| membership[s] != membership[t]) {
            return Err(Error::param(format!("edge ({s}, {t}) crosses slices")));
        }
        let normalized = Arc::new(gcn_normalize(&adjacency));
        Ok(Self {
            adjacency,
            membership,
            normalized,
        })
    }

    pub fn adjacency(&self) -> &SparseAdjacency {
        &self.adjacency
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn n_slices(&self) -> usize {
        self.membership.iter().max().map_or(0, |m| m + 1)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.node_count()
    }

    /// Cached `D^-1/2 (A + I) D^-1/2`.
    pub fn normalized(&self) -> &Arc<SparseAdjacency> {
        &self.normalized
    }
}

/// Undirected kNN edges of one point set, symmetrized by union. Distance
/// ties go to the lower spot index.
fn knn_pairs(coords: &DenseMatrix, k: usize) -> Result<Vec<(usize, usize)>> {
    let n = coords.rows();
    if coords.cols() != 2 {
        return Err(Error::Shape {
            op: "build_snn_graph",
            left: coords.shape(),
            right: (n, 2),
        });
    }
    if k == 0 || n < k + 1 {
        return Err(Error::param(format!(
            "SNN graph with k = {k} needs at least k + 1 spots, got {n}"
        )));
    }
    let mut pairs = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let (xi, yi) = (coords.get(i, 0), coords.get(i, 1));
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| {
            let dx = coords.get(j, 0) - xi;
            let dy = coords.get(j, 1) - yi;
            (dx * dx + dy * dy, j)
        }));
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, order);
        }
        pairs.extend(cand[..k].iter().map(|&(_, j)| (i, j)));
    }
    Ok(pairs)
}

/// Connects every spot to its `k` nearest spatial neighbors.
pub fn build_snn_graph(coords: &DenseMatrix, k: usize) -> Result<SnnGraph> {
    let adjacency = SparseAdjacency::from_undirected(coords.rows(), knn_pairs(coords, k)?)?;
    SnnGraph::new(adjacency, vec![0; coords.rows()])
}

/// Per-slice SNN graphs assembled block-diagonally in global spot order.
pub fn build_multi_slice_graph(dataset: &MultiSliceDataset, k: usize) -> Result<SnnGraph> {
    let mut pairs = Vec::new();
    for (slice, offset) in dataset.slices().iter().zip(dataset.offsets()) {
        pairs.extend(
            knn_pairs(&slice.coords, k)?
                .into_iter()
                .map(|(a, b)| (a + offset, b + offset)),
        );
    }
    let adjacency = SparseAdjacency::from_undirected(dataset.n_spots(), pairs)?;
    SnnGraph::new(adjacency, dataset.membership())
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the weighted degree of `A + I`.
pub fn gcn_normalize(adjacency: &SparseAdjacency) -> SparseAdjacency {
    let n = adjacency.node_count();
    let mut degree = vec![1.0; n];
    for (s, t, w) in adjacency.edges() {
        if s != t {
            degree[s] += w;
        }
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut entries: Vec<(usize, usize, f64)> = adjacency
        .edges()
        .filter(|&(s, t, _)| s != t)
        .map(|(s, t, w)| (s, t, w * inv_sqrt[s] * inv_sqrt[t]))
        .collect();
    entries.extend((0..n).map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i])));
    SparseAdjacency::from_edges(n, entries, adjacency.is_symmetric())
        .expect("normalized operator preserves structure")
}

/// How node features are masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Whole gene columns are zeroed for every spot.
    #[default]
    Column,
    /// Individual entries are zeroed independently.
    Entry,
}

/// Masking rates of one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSettings {
    pub feature_mask_rate: f64,
    pub edge_mask_rate: f64,
    pub mask_mode: MaskMode,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            feature_mask_rate: 0.2,
            edge_mask_rate: 0.2,
            mask_mode: MaskMode::Column,
        }
    }
}

/// One stochastic view of the graph.
#[derive(Debug, Clone)]
pub struct AugmentedView {
    pub masked_features: DenseMatrix,
    pub masked_adjacency: SparseAdjacency,
    pub feature_mask_rate: f64,
    pub edge_mask_rate: f64,
    pub stream: String,
}

impl AugmentedView {
    /// GCN operator of the masked adjacency.
    pub fn normalized_operator(&self) -> SparseAdjacency {
        gcn_normalize(&self.masked_adjacency)
    }
}

/// Masks features and drops undirected edges (both directions together).
pub fn augment(
    graph: &SnnGraph,
    features: &DenseMatrix,
    settings: &AugmentSettings,
    rng: &mut SeededRng,
) -> Result<AugmentedView> {
    let fr = settings.feature_mask_rate;
    let er = settings.edge_mask_rate;
    if !(0.0..=1.0).contains(&fr) || !(0.0..=1.0).contains(&er) {
        return Err(Error::param(format!("mask rates must lie in [0, 1], got {fr} and {er}")));
    }
    if features.rows() != graph.node_count() {
        return Err(Error::Shape {
            op: "augment",
            left: features.shape(),
            right: (graph.node_count(), features.cols()),
        });
    }
    let mut masked = features.clone();
    match settings.mask_mode {
        MaskMode::Column => {
            let drop: Vec<bool> = (0..features.cols()).map(|_| rng.random::<f64>() < fr).collect();
            for r in 0..masked.rows() {
                for (v, &d) in masked.row_mut(r).iter_mut().zip(&drop) {
                    if d {
                        *v = 0.0;
                    }
                }
            }
        }
        MaskMode::Entry => {
            for v in masked.as_mut_slice() {
                if rng.random::<f64>() < fr {
                    *v = 0.0;
                }
            }
        }
    }
    let kept: Vec<(usize, usize)> = graph
        .adjacency
        .undirected_edges()
        .filter(|_| rng.random::<f64>() >= er)
        .collect();
    let masked_adjacency = SparseAdjacency::from_undirected(graph.node_count(), kept)?;
    Ok(AugmentedView {
        masked_features: masked,
        masked_adjacency,
        feature_mask_rate: fr,
        edge_mask_rate: er,
        stream: rng.stream().to_string(),
    })
}
