use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{MultiSliceDataset, Slice};
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, SeededRng};

/// Layered synthetic tissue: horizontal bands of domains on a jittered grid,
/// Poisson counts, and a per-gene log-normal batch factor on every slice but
/// the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub spots_per_slice: usize,
    pub genes: usize,
    pub domains: usize,
    pub slices: usize,
    /// Standard deviation of the per-gene log batch factor.
    pub batch_shift: f64,
    pub seed: u64,
    /// Genes up-regulated in each domain.
    pub marker_genes_per_domain: usize,
    /// Rate multiplier of a marker gene inside its domain.
    pub marker_fold: f64,
    /// Median base rate; per-gene base rates are log-normal around it.
    pub base_rate: f64,
    /// Uniform jitter half-width in grid units.
    pub jitter: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            spots_per_slice: 900,
            genes: 200,
            domains: 3,
            slices: 1,
            batch_shift: 0.0,
            seed: 0,
            marker_genes_per_domain: 10,
            marker_fold: 2.0,
            base_rate: 1.0,
            jitter: 0.2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::param(m));
        if self.domains < 2 {
            return fail(format!("synthetic data needs at least 2 domains, got {}", self.domains));
        }
        if !(self.batch_shift >= 0.0) {
            return fail(format!("batch shift must be >= 0, got {}", self.batch_shift));
        }
        if self.slices == 0 || self.genes == 0 {
            return fail("slices and genes must be positive".into());
        }
        if self.spots_per_slice < self.domains {
            return fail(format!(
                "{} spots cannot hold {} domains",
                self.spots_per_slice, self.domains
            ));
        }
        if self.marker_genes_per_domain * self.domains > self.genes {
            return fail(format!(
                "{} marker genes per domain x {} domains exceed {} genes",
                self.marker_genes_per_domain, self.domains, self.genes
            ));
        }
        if !(self.marker_fold > 0.0) || !(self.base_rate > 0.0) || !(self.jitter >= 0.0) {
            return fail("marker fold and base rate must be positive, jitter non-negative".into());
        }
        Ok(())
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        let cols = (self.spots_per_slice as f64).sqrt().ceil() as usize;
        let rows = self.spots_per_slice.div_ceil(cols);
        (rows, cols)
    }
}

/// Generated dataset plus the noiseless signal behind it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: MultiSliceDataset,
    /// Domains x genes Poisson rates before the batch factor.
    pub rates: DenseMatrix,
    /// Slices x genes multiplicative batch factors (all ones for slice 0).
    pub batch_factors: DenseMatrix,
    /// Domain index of every global spot.
    pub domains: Vec<usize>,
}

impl SyntheticData {
    /// Expected count of each spot and gene, batch factor included.
    pub fn expected_counts(&self) -> DenseMatrix {
        let membership = self.dataset.membership();
        DenseMatrix::from_fn(self.domains.len(), self.rates.cols(), |i, g| {
            self.rates.get(self.domains[i], g) * self.batch_factors.get(membership[i], g)
        })
    }
}

pub fn domain_label(d: usize) -> String {
    format!("domain_{d}")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rate_rng = SeededRng::new(spec.seed, "synth/rates");
    let base: Vec<f64> = (0..spec.genes)
        .map(|_| {
            let z: f64 = rate_rng.sample(StandardNormal);
            spec.base_rate * (0.5 * z).exp()
        })
        .collect();
    let mut perm: Vec<usize> = (0..spec.genes).collect();
    for i in (1..perm.len()).rev() {
        let j = rate_rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut rates = DenseMatrix::from_fn(spec.domains, spec.genes, |_, g| base[g]);
    for d in 0..spec.domains {
        for m in 0..spec.marker_genes_per_domain {
            let g = perm[d * spec.marker_genes_per_domain + m];
            rates.set(d, g, base[g] * spec.marker_fold);
        }
    }

    let mut batch_factors = DenseMatrix::filled(spec.slices, spec.genes, 1.0);
    for s in 1..spec.slices {
        let mut rng = SeededRng::new(spec.seed, &format!("synth/batch/{s}"));
        for g in 0..spec.genes {
            let z: f64 = rng.sample(StandardNormal);
            batch_factors.set(s, g, (spec.batch_shift * z).exp());
        }
    }

    let (grid_rows, grid_cols) = spec.grid_shape();
    let gene_names: Vec<String> = (0..spec.genes).map(|g| format!("gene_{g}")).collect();
    let mut slices = Vec::with_capacity(spec.slices);
    let mut domains = Vec::with_capacity(spec.slices * spec.spots_per_slice);
    for s in 0..spec.slices {
        let mut rng = SeededRng::new(spec.seed, &format!("synth/spots/{s}"));
        let n = spec.spots_per_slice;
        let mut expression = DenseMatrix::zeros(n, spec.genes);
        let mut coords = DenseMatrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let (row, col) = (i / grid_cols, i % grid_cols);
            let d = row * spec.domains / grid_rows;
            let jx = if spec.jitter > 0.0 { rng.random_range(-spec.jitter..=spec.jitter) } else { 0.0 };
            let jy = if spec.jitter > 0.0 { rng.random_range(-spec.jitter..=spec.jitter) } else { 0.0 };
            coords.set(i, 0, col as f64 + jx);
            coords.set(i, 1, row as f64 + jy);
            for g in 0..spec.genes {
                let lambda = rates.get(d, g) * batch_factors.get(s, g);
                let count: f64 = Poisson::new(lambda)
                    .map_err(|e| Error::Numeric(format!("poisson rate {lambda}: {e}")))?
                    .sample(&mut rng);
                expression.set(i, g, count);
            }
            labels.push(domain_label(d));
            domains.push(d);
        }
        slices.push(Slice::new(
            format!("slice_{s}"),
            expression,
            coords,
            gene_names.clone(),
            Some(labels),
        )?);
    }
    Ok(SyntheticData {
        dataset: MultiSliceDataset::new(slices)?,
        rates,
        batch_factors,
        domains,
    })
}
