//! Training objectives: similarity telescope, reconstruction, prototypical
//! contrast, similarity scaling, and their weighted sums.
//!
//! Each loss has a tape form used in training and a plain-value form that
//! builds a throwaway tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::kmeans_once;
use crate::numeric::{DenseMatrix, SeededRng, Tape, Var};

pub const PROTOTYPE_MAX_ITER: usize = 100;
pub const PROTOTYPE_TOL: f64 = 1e-6;

/// Loss weights and the knobs of the prototypical and scaling terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_sc: f64,
    pub lambda_recon: f64,
    pub lambda_pcl: f64,
    pub lambda_ss: f64,
    pub tau: f64,
    pub top_k: usize,
    pub warmup_epochs: usize,
    /// Multipliers of the base cluster count, one per granularity.
    pub pcl_granularities: Vec<f64>,
    pub pcl_refresh_every: usize,
    /// Whether a spot's own cross-view similarity may enter its own-slice top-k.
    pub ss_include_self: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_sc: 1.0,
            lambda_recon: 0.1,
            lambda_pcl: 0.01,
            lambda_ss: 1.0,
            tau: 0.75,
            top_k: 5,
            warmup_epochs: 500,
            pcl_granularities: vec![1.0, 1.5, 2.0],
            pcl_refresh_every: 1,
            ss_include_self: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_sc", self.lambda_sc),
            ("lambda_recon", self.lambda_recon),
            ("lambda_pcl", self.lambda_pcl),
            ("lambda_ss", self.lambda_ss),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::param(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.top_k == 0 {
            return Err(Error::param("top_k must be >= 1"));
        }
        if self.pcl_refresh_every == 0 {
            return Err(Error::param("pcl_refresh_every must be >= 1"));
        }
        if self.pcl_granularities.is_empty() || self.pcl_granularities.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::param("pcl_granularities must be a nonempty list of positive multipliers"));
        }
        Ok(())
    }
}

/// Unweighted loss components of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub sc: f64,
    pub recon: f64,
    pub pcl: f64,
    pub ss: f64,
}

pub fn combined_single(parts: &LossParts, w: &LossWeights) -> f64 {
    w.lambda_sc * parts.sc + w.lambda_recon * parts.recon
}

/// The prototypical term only counts from `warmup_epochs` on.
pub fn combined_multi(parts: &LossParts, w: &LossWeights, epoch: usize) -> f64 {
    let pcl = if epoch >= w.warmup_epochs { w.lambda_pcl * parts.pcl } else { 0.0 };
    combined_single(parts, w) + pcl + w.lambda_ss * parts.ss
}

/// `mean((H - H^T)^2)` with `H = norm(z1) norm(z2)^T`. Returns the loss and `H`.
pub fn similarity_telescope(tape: &mut Tape, z1: Var, z2: Var) -> Result<(Var, Var)> {
    if tape.value(z1).shape() != tape.value(z2).shape() {
        return Err(Error::Shape {
            op: "similarity_telescope",
            left: tape.value(z1).shape(),
            right: tape.value(z2).shape(),
        });
    }
    let n1 = tape.row_l2_normalize(z1)?;
    let n2 = tape.row_l2_normalize(z2)?;
    let n2t = tape.transpose(n2)?;
    let h = tape.matmul(n1, n2t)?;
    let ht = tape.transpose(h)?;
    let d = tape.sub(h, ht)?;
    let sq = tape.square(d)?;
    Ok((tape.mean(sq)?, h))
}

fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// `MSE(x, x1) + MSE(x, x2)`, each averaged over every entry.
pub fn reconstruction(tape: &mut Tape, x: Var, x1: Var, x2: Var) -> Result<Var> {
    let a = mse(tape, x, x1)?;
    let b = mse(tape, x, x2)?;
    tape.add(a, b)
}

/// K-means centroids (unit length) and assignments at one granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Granularity {
    pub centroids: DenseMatrix,
    pub assignments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub granularities: Vec<Granularity>,
}

impl PrototypeSet {
    pub fn cluster_counts(&self) -> Vec<usize> {
        self.granularities.iter().map(|g| g.centroids.rows()).collect()
    }
}

/// `round(m * k_base)` for each multiplier, halves rounding up.
pub fn granularity_counts(k_base: usize, multipliers: &[f64]) -> Vec<usize> {
    multipliers
        .iter()
        .map(|m| (m * k_base as f64 + 0.5).floor() as usize)
        .collect()
}

/// Clusters the row-normalized embeddings once per granularity. Each
/// granularity draws from its own derived stream.
pub fn compute_prototypes(
    embeddings: &DenseMatrix,
    k_base: usize,
    multipliers: &[f64],
    rng: &SeededRng,
) -> Result<PrototypeSet> {
    if k_base < 2 {
        return Err(Error::param(format!("k_base must be >= 2, got {k_base}")));
    }
    let counts = granularity_counts(k_base, multipliers);
    let n = embeddings.rows();
    if let Some(&too_many) = counts.iter().find(|&&k| k > n) {
        return Err(Error::param(format!("{too_many} prototypes requested for {n} spots")));
    }
    let unit = embeddings.row_l2_normalize()?;
    let granularities = counts
        .iter()
        .enumerate()
        .map(|(t, &k)| {
            let mut stream = rng.derive(&t.to_string());
            let run = kmeans_once(&unit, k, &mut stream, PROTOTYPE_MAX_ITER, PROTOTYPE_TOL)?;
            Ok(Granularity {
                centroids: run.centroids.row_l2_normalize()?,
                assignments: run.labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrototypeSet { granularities })
}

/// `-(1/(N T)) sum_i sum_t log softmax(cos(z_i, P^t) / tau)[map_t(i)]`.
/// Prototypes enter as constants.
pub fn prototypical(tape: &mut Tape, z: Var, prototypes: &PrototypeSet, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("tau must be > 0, got {tau}")));
    }
    let (n, d) = tape.value(z).shape();
    let t_count = prototypes.granularities.len();
    if t_count == 0 {
        return Err(Error::param("prototype set has no granularities"));
    }
    let unit = tape.row_l2_normalize(z)?;
    let mut total: Option<Var> = None;
    for g in &prototypes.granularities {
        if g.centroids.cols() != d || g.assignments.len() != n {
            return Err(Error::Shape {
                op: "prototypical",
                left: (n, d),
                right: (g.assignments.len(), g.centroids.cols()),
            });
        }
        let pt = tape.constant(g.centroids.transpose());
        let sims = tape.matmul(unit, pt)?;
        let logits = tape.scale(sims, 1.0 / tau)?;
        let picked = tape.log_softmax_gather(logits, &g.assignments)?;
        let s = tape.sum(picked)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    tape.scale(total.expect("nonempty"), -1.0 / (n * t_count) as f64)
}

/// Squared gaps between each spot's own-slice and other-slice top-k mean
/// similarity, summed over spots and other slices and divided by
/// `N (N_d - 1)`. Top-k selections are constants of the forward pass.
pub fn similarity_scaling(tape: &mut Tape, h: Var, membership: &[usize], k: usize, include_self: bool) -> Result<Var> {
    let (rows, cols) = tape.value(h).shape();
    if rows != cols || membership.len() != rows {
        return Err(Error::Shape {
            op: "similarity_scaling",
            left: (rows, cols),
            right: (membership.len(), membership.len()),
        });
    }
    let n_slices = membership.iter().max().map_or(0, |m| m + 1);
    if n_slices < 2 {
        return Err(Error::param("similarity scaling needs at least 2 slices"));
    }
    let mut sizes = vec![0usize; n_slices];
    for &m in membership {
        sizes[m] += 1;
    }
    if let Some((s, &size)) = sizes.iter().enumerate().find(|(_, &c)| c < k) {
        return Err(Error::param(format!("slice {s} has {size} spots, top-k needs {k}")));
    }
    let means = tape.group_top_k_mean(h, membership, n_slices, k, !include_self)?;
    let own_mask = tape.constant(DenseMatrix::from_fn(rows, n_slices, |i, j| {
        if membership[i] == j {
            1.0
        } else {
            0.0
        }
    }));
    let own_only = tape.mul(means, own_mask)?;
    let own = tape.sum_rows(own_only)?;
    let gaps = tape.sub_col_broadcast(means, own)?;
    let sq = tape.square(gaps)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / (rows * (n_slices - 1)) as f64)
}

/// Plain-value similarity telescope: the loss and `H`.
pub fn similarity_telescope_loss(z1: &DenseMatrix, z2: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    let mut tape = Tape::new();
    let a = tape.constant(z1.clone());
    let b = tape.constant(z2.clone());
    let (loss, h) = similarity_telescope(&mut tape, a, b)?;
    Ok((tape.scalar(loss), tape.value(h).clone()))
}

pub fn reconstruction_loss(x: &DenseMatrix, x1: &DenseMatrix, x2: &DenseMatrix) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = [x, x1, x2].map(|m| tape.constant(m.clone()));
    let loss = reconstruction(&mut tape, vars[0], vars[1], vars[2])?;
    Ok(tape.scalar(loss))
}

pub fn prototypical_loss(z: &DenseMatrix, prototypes: &PrototypeSet, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let loss = prototypical(&mut tape, zv, prototypes, tau)?;
    Ok(tape.scalar(loss))
}

pub fn similarity_scaling_loss(h: &DenseMatrix, membership: &[usize], k: usize, include_self: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let loss = similarity_scaling(&mut tape, hv, membership, k, include_self)?;
    Ok(tape.scalar(loss))
}
