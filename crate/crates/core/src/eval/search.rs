use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kmeans, silhouette, EVAL_RESTARTS};
use crate::data::MultiSliceDataset;
use crate::error::{Error, Result};
use crate::graph::SnnGraph;
use crate::numeric::SeededRng;
use crate::pipeline::{embed, train, TrainConfig};

/// Learning rates searched when none is configured.
pub const LR_GRID: [f64; 5] = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrScore {
    pub learning_rate: f64,
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSearchResult {
    pub best_learning_rate: f64,
    pub scores: Vec<LrScore>,
}

/// Trains once per learning rate, clusters the embeddings into `k_base`
/// groups and keeps the rate with the highest silhouette. Ties go to the
/// smaller rate. Grid points train independently and may run in parallel
/// on the current rayon pool; the result does not depend on the pool size.
pub fn lr_search_by_silhouette(
    dataset: &MultiSliceDataset,
    graph: &SnnGraph,
    config: &TrainConfig,
    grid: &[f64],
) -> Result<LrSearchResult> {
    if grid.is_empty() {
        return Err(Error::param("learning-rate grid is empty"));
    }
    let k = config
        .k_base
        .ok_or_else(|| Error::param("learning-rate search needs k_base"))?;
    let scores = grid
        .par_iter()
        .map(|&lr| {
            let cfg = TrainConfig {
                learning_rate: lr,
                ..config.clone()
            };
            let (params, _) = train(dataset, graph, &cfg)?;
            let z = embed(&params, dataset, graph)?;
            let mut rng = SeededRng::new(config.seed, "lr_search/kmeans");
            let clusters = kmeans(&z, k, &mut rng, EVAL_RESTARTS)?;
            let s = silhouette(&z, &clusters.labels)?;
            log::info!("learning rate {lr}: silhouette {s:.4}");
            Ok(LrScore {
                learning_rate: lr,
                silhouette: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = scores
        .iter()
        .reduce(|best, s| {
            let better = s.silhouette > best.silhouette
                || (s.silhouette == best.silhouette && s.learning_rate < best.learning_rate);
            if better {
                s
            } else {
                best
            }
        })
        .expect("nonempty grid");
    Ok(LrSearchResult {
        best_learning_rate: best.learning_rate,
        scores,
    })
}
