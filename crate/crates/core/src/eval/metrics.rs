use std::collections::HashMap;
use std::hash::Hash;

use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, NORM_EPS};

/// Dense ids in order of first appearance.
pub fn encode_labels<T: Eq + Hash + Clone>(labels: &[T]) -> (Vec<usize>, Vec<T>) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let mut alphabet = Vec::new();
    let encoded = labels
        .iter()
        .map(|l| {
            *ids.entry(l).or_insert_with(|| {
                alphabet.push(l.clone());
                alphabet.len() - 1
            })
        })
        .collect();
    (encoded, alphabet)
}

struct Contingency {
    n: usize,
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn contingency<A: Eq + Hash + Clone, B: Eq + Hash + Clone>(truth: &[A], pred: &[B]) -> Result<Contingency> {
    if truth.len() != pred.len() {
        return Err(Error::Shape {
            op: "partition comparison",
            left: (truth.len(), 1),
            right: (pred.len(), 1),
        });
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("partitions are empty".into()));
    }
    let (t, ta) = encode_labels(truth);
    let (p, pa) = encode_labels(pred);
    let mut table = vec![vec![0usize; pa.len()]; ta.len()];
    for (&a, &b) in t.iter().zip(&p) {
        table[a][b] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..pa.len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(Contingency {
        n: truth.len(),
        table,
        rows,
        cols,
    })
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index; 1.0 when the chance-corrected denominator vanishes.
pub fn ari<A: Eq + Hash + Clone, B: Eq + Hash + Clone>(truth: &[A], pred: &[B]) -> Result<f64> {
    let c = contingency(truth, pred)?;
    let index: f64 = c.table.iter().flatten().map(|&v| comb2(v)).sum();
    let sum_a: f64 = c.rows.iter().map(|&v| comb2(v)).sum();
    let sum_b: f64 = c.cols.iter().map(|&v| comb2(v)).sum();
    let total = comb2(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies. Two
/// single-cluster partitions score 1.0.
pub fn nmi<A: Eq + Hash + Clone, B: Eq + Hash + Clone>(truth: &[A], pred: &[B]) -> Result<f64> {
    let c = contingency(truth, pred)?;
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                let v = v as f64;
                mi += v / n * (n * v / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
            }
        }
    }
    let (hu, hv) = (entropy(&c.rows, n), entropy(&c.cols, n));
    if hu == 0.0 && hv == 0.0 {
        return Ok(1.0);
    }
    Ok((mi.max(0.0) / (0.5 * (hu + hv))).min(1.0))
}

/// Fraction of spots matched under the best one-to-one label mapping.
pub fn clustering_accuracy<A: Eq + Hash + Clone, B: Eq + Hash + Clone>(truth: &[A], pred: &[B]) -> Result<f64> {
    let c = contingency(truth, pred)?;
    let size = c.rows.len().max(c.cols.len());
    let weights = Matrix::from_fn(size, size, |(i, j)| {
        c.table.get(i).and_then(|r| r.get(j)).map_or(0i64, |&v| v as i64)
    });
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / c.n as f64)
}

fn pairwise_distances(x: &DenseMatrix) -> DenseMatrix {
    let n = x.rows();
    let norms: Vec<f64> = x.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let gram = x.matmul(&x.transpose()).expect("square gram");
    DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (norms[i] + norms[j] - 2.0 * gram.get(i, j)).max(0.0).sqrt()
        }
    })
}

fn silhouette_from_distances(dist: &DenseMatrix, labels: &[usize], k: usize) -> Vec<f64> {
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut sums = vec![0.0; k];
    labels
        .iter()
        .enumerate()
        .map(|(i, &li)| {
            if sizes[li] <= 1 {
                return 0.0;
            }
            sums.iter_mut().for_each(|s| *s = 0.0);
            for (j, &lj) in labels.iter().enumerate() {
                sums[lj] += dist.get(i, j);
            }
            let a = sums[li] / (sizes[li] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != li && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect()
}

/// Per-spot Euclidean silhouette values.
pub fn silhouette_samples<T: Eq + Hash + Clone>(embeddings: &DenseMatrix, labels: &[T]) -> Result<Vec<f64>> {
    if labels.len() != embeddings.rows() {
        return Err(Error::Shape {
            op: "silhouette",
            left: embeddings.shape(),
            right: (labels.len(), 1),
        });
    }
    let (ids, alphabet) = encode_labels(labels);
    if alphabet.len() < 2 {
        return Err(Error::UndefinedMetric("silhouette needs at least 2 clusters".into()));
    }
    Ok(silhouette_from_distances(&pairwise_distances(embeddings), &ids, alphabet.len()))
}

/// Mean silhouette over all spots.
pub fn silhouette<T: Eq + Hash + Clone>(embeddings: &DenseMatrix, labels: &[T]) -> Result<f64> {
    let s = silhouette_samples(embeddings, labels)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteBatch<T> {
    /// Mean over scored domains of `1 - mean |silhouette by slice|`.
    pub score: f64,
    /// Domains observed in only one slice.
    pub skipped: Vec<T>,
}

/// Batch mixing within each domain: 1 means slices are indistinguishable.
pub fn silhouette_batch<T: Eq + Hash + Clone>(
    embeddings: &DenseMatrix,
    domains: &[T],
    membership: &[usize],
) -> Result<SilhouetteBatch<T>> {
    if domains.len() != embeddings.rows() || membership.len() != embeddings.rows() {
        return Err(Error::Shape {
            op: "silhouette_batch",
            left: embeddings.shape(),
            right: (domains.len(), membership.len()),
        });
    }
    let (ids, alphabet) = encode_labels(domains);
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for (d, name) in alphabet.into_iter().enumerate() {
        let rows: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == d).collect();
        let slices: Vec<usize> = rows.iter().map(|&i| membership[i]).collect();
        let (slice_ids, present) = encode_labels(&slices);
        if present.len() < 2 {
            skipped.push(name);
            continue;
        }
        let sub = embeddings.select_rows(&rows);
        let s = silhouette_from_distances(&pairwise_distances(&sub), &slice_ids, present.len());
        scores.push(1.0 - s.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64);
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric(
            "no domain is present in more than one slice".into(),
        ));
    }
    Ok(SilhouetteBatch {
        score: scores.iter().sum::<f64>() / scores.len() as f64,
        skipped,
    })
}

/// Index of the most cosine-similar reference row for every query row; ties
/// go to the lower reference index.
pub fn nearest_reference(reference: &DenseMatrix, query: &DenseMatrix) -> Result<Vec<usize>> {
    if reference.rows() == 0 {
        return Err(Error::param("label transfer needs a nonempty reference"));
    }
    if reference.cols() != query.cols() {
        return Err(Error::Shape {
            op: "label transfer",
            left: reference.shape(),
            right: query.shape(),
        });
    }
    let unit = |m: &DenseMatrix| {
        DenseMatrix::from_fn(m.rows(), m.cols(), |r, c| {
            let norm = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            m.get(r, c) / norm
        })
    };
    let sim = unit(query).matmul(&unit(reference).transpose())?;
    Ok(sim
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// ARI between the query truth and labels transferred by 1-NN cosine matching.
pub fn label_transfer_ari<T: Eq + Hash + Clone, U: Eq + Hash + Clone>(
    reference: &DenseMatrix,
    reference_labels: &[T],
    query: &DenseMatrix,
    query_truth: &[U],
) -> Result<f64> {
    if reference_labels.len() != reference.rows() || query_truth.len() != query.rows() {
        return Err(Error::Shape {
            op: "label transfer labels",
            left: (reference_labels.len(), query_truth.len()),
            right: (reference.rows(), query.rows()),
        });
    }
    let transferred: Vec<T> = nearest_reference(reference, query)?
        .into_iter()
        .map(|j| reference_labels[j].clone())
        .collect();
    ari(query_truth, &transferred)
}
