use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, SeededRng};

pub const KMEANS_TOL: f64 = 1e-6;
pub const EVAL_MAX_ITER: usize = 300;
pub const EVAL_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: DenseMatrix,
    /// Sum of squared distances to the assigned centroid.
    pub objective: f64,
    /// Objective after every assignment step.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid of every point (ties to the lower centroid index) and
/// the squared distance to it.
fn assign(data: &DenseMatrix, centroids: &DenseMatrix) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(data.rows());
    let mut dists = Vec::with_capacity(data.rows());
    for row in data.iter_rows() {
        let mut best = (f64::INFINITY, 0);
        for (c, centroid) in centroids.iter_rows().enumerate() {
            let d = sq_dist(row, centroid);
            if d < best.0 {
                best = (d, c);
            }
        }
        labels.push(best.1);
        dists.push(best.0);
    }
    (labels, dists)
}

fn plus_plus_seed(data: &DenseMatrix, k: usize, rng: &mut SeededRng) -> DenseMatrix {
    let n = data.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = data.iter_rows().map(|r| sq_dist(r, data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).expect("positive mass"))
        } else {
            // every point coincides with a chosen centroid
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, row) in data.iter_rows().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(row, data.row(next)));
        }
    }
    data.select_rows(&chosen)
}

/// One k-means++ seeded Lloyd run. Stops when the relative objective drop
/// falls to `tol` or after `max_iter` assignment steps. A centroid that
/// loses all its points is moved onto the point farthest from its own
/// centroid.
pub fn kmeans_once(data: &DenseMatrix, k: usize, rng: &mut SeededRng, max_iter: usize, tol: f64) -> Result<KMeansResult> {
    let n = data.rows();
    if k < 1 || k > n {
        return Err(Error::param(format!("k-means needs 1 <= K <= {n}, got {k}")));
    }
    data.validate_finite("k-means input")?;
    let d = data.cols();
    let mut centroids = plus_plus_seed(data, k, rng);
    let (mut labels, mut dists) = assign(data, &centroids);
    let mut history = vec![dists.iter().sum::<f64>()];
    for _ in 1..max_iter.max(1) {
        let mut sums = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (row, &l) in data.iter_rows().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
                *s += v;
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("k <= n");
                taken.push(far);
                dists[far] = 0.0;
                centroids.row_mut(c).copy_from_slice(data.row(far));
            }
        }
        let (new_labels, new_dists) = assign(data, &centroids);
        let objective: f64 = new_dists.iter().sum();
        let previous = *history.last().expect("nonempty");
        labels = new_labels;
        dists = new_dists;
        history.push(objective);
        if objective == 0.0 || previous - objective <= tol * previous {
            break;
        }
    }
    let objective = *history.last().expect("nonempty");
    Ok(KMeansResult {
        labels,
        centroids,
        objective,
        history,
    })
}

/// Best of `restarts` runs by objective; the earliest run wins ties.
pub fn kmeans(data: &DenseMatrix, k: usize, rng: &mut SeededRng, restarts: usize) -> Result<KMeansResult> {
    if k < 2 || k > data.rows() {
        return Err(Error::param(format!(
            "k-means clustering needs 2 <= K <= {}, got {k}",
            data.rows()
        )));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(data, k, rng, EVAL_MAX_ITER, KMEANS_TOL)?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
