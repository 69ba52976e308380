//! Clustering, integration and alignment metrics, and the unsupervised
//! learning-rate search.

mod kmeans;
mod metrics;
mod search;

use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, kmeans_once, KMeansResult, EVAL_MAX_ITER, EVAL_RESTARTS, KMEANS_TOL};
pub use metrics::{
    ari, clustering_accuracy, encode_labels, label_transfer_ari, nearest_reference, nmi, silhouette,
    silhouette_batch, silhouette_samples, SilhouetteBatch,
};
pub use search::{lr_search_by_silhouette, LrScore, LrSearchResult, LR_GRID};

/// Contents of `metrics.json`. Metrics that were not requested or have no
/// inputs serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub ca: Option<f64>,
    pub silhouette: Option<f64>,
    pub silhouette_batch: Option<f64>,
    pub ltari: Option<f64>,
    pub k: usize,
    pub seed: u64,
}
