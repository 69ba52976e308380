use std::collections::HashMap;

use super::{MultiSliceDataset, Slice};
use crate::error::{Error, Result};

pub const DEFAULT_HVG: usize = 5000;
pub const DEFAULT_TARGET_SUM: f64 = 10_000.0;

/// Keeps the `n` genes whose `log1p(count)` has the largest variance over
/// every spot of every slice. Ties go to the lower gene index and the kept
/// genes stay in their original order.
pub fn select_hvg(dataset: &MultiSliceDataset, n: usize) -> Result<MultiSliceDataset> {
    let n_genes = dataset.n_genes();
    if n > n_genes {
        return Err(Error::param(format!(
            "cannot select {n} highly variable genes out of {n_genes}"
        )));
    }
    if n == 0 {
        return Err(Error::param("highly variable gene count must be at least 1"));
    }
    let mut sum = vec![0.0; n_genes];
    let mut sum_sq = vec![0.0; n_genes];
    let mut count = 0.0;
    for slice in dataset.slices() {
        for row in slice.expression.iter_rows() {
            for (g, &v) in row.iter().enumerate() {
                let l = v.ln_1p();
                sum[g] += l;
                sum_sq[g] += l * l;
            }
            count += 1.0;
        }
    }
    let variance: Vec<f64> = (0..n_genes)
        .map(|g| {
            let mean = sum[g] / count;
            (sum_sq[g] / count - mean * mean).max(0.0)
        })
        .collect();
    let mut order: Vec<usize> = (0..n_genes).collect();
    order.sort_by(|&a, &b| variance[b].total_cmp(&variance[a]).then(a.cmp(&b)));
    let mut keep = order[..n].to_vec();
    keep.sort_unstable();
    dataset.map_slices(|s| {
        Slice::new(
            s.slice_id.clone(),
            s.expression.select_columns(&keep),
            s.coords.clone(),
            keep.iter().map(|&g| s.gene_names[g].clone()).collect(),
            s.labels.clone(),
        )
    })
}

/// Scales each spot to `target_sum` total counts, then applies `log(1 + x)`.
pub fn normalize_cpm_log1p(slice: &Slice, target_sum: f64) -> Result<Slice> {
    if !(target_sum > 0.0) {
        return Err(Error::param(format!("target sum must be positive, got {target_sum}")));
    }
    let mut expression = slice.expression.clone();
    for r in 0..expression.rows() {
        let row = expression.row_mut(r);
        let total: f64 = row.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateSpot { spot: r });
        }
        let factor = target_sum / total;
        row.iter_mut().for_each(|v| *v = (*v * factor).ln_1p());
    }
    Slice::new(
        slice.slice_id.clone(),
        expression,
        slice.coords.clone(),
        slice.gene_names.clone(),
        slice.labels.clone(),
    )
}

/// Joins slices into one dataset. Genes are intersected and laid out in the
/// order of the first slice.
pub fn concatenate_slices(slices: Vec<Slice>) -> Result<MultiSliceDataset> {
    let Some(first) = slices.first() else {
        return Err(Error::param("no slices to concatenate"));
    };
    let maps: Vec<HashMap<&str, usize>> = slices
        .iter()
        .map(|s| s.gene_names.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect())
        .collect();
    let shared: Vec<String> = first
        .gene_names
        .iter()
        .filter(|g| maps.iter().all(|m| m.contains_key(g.as_str())))
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(Error::ingestion(
            "concatenate",
            None,
            "slices share no gene names",
        ));
    }
    let aligned = slices
        .iter()
        .zip(&maps)
        .map(|(s, m)| {
            let cols: Vec<usize> = shared.iter().map(|g| m[g.as_str()]).collect();
            Slice::new(
                s.slice_id.clone(),
                s.expression.select_columns(&cols),
                s.coords.clone(),
                shared.clone(),
                s.labels.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MultiSliceDataset::new(aligned)
}

/// Highly-variable-gene selection followed by CPM normalization and log1p.
/// `hvg_n` larger than the gene count keeps every gene.
pub fn preprocess(dataset: &MultiSliceDataset, hvg_n: usize, target_sum: f64) -> Result<MultiSliceDataset> {
    let selected = select_hvg(dataset, hvg_n.min(dataset.n_genes()))?;
    selected.map_slices(|s| normalize_cpm_log1p(s, target_sum))
}
