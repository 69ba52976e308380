//! Slices, multi-slice datasets, preprocessing and the synthetic generator.

pub mod io;
mod preprocess;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use preprocess::{concatenate_slices, normalize_cpm_log1p, preprocess, select_hvg, DEFAULT_HVG, DEFAULT_TARGET_SUM};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

/// One spatial transcriptomics sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub slice_id: String,
    /// Spots x genes.
    pub expression: DenseMatrix,
    /// Spots x 2.
    pub coords: DenseMatrix,
    pub gene_names: Vec<String>,
    pub labels: Option<Vec<String>>,
}

impl Slice {
    pub fn new(
        slice_id: String,
        expression: DenseMatrix,
        coords: DenseMatrix,
        gene_names: Vec<String>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = expression.rows();
        if n == 0 {
            return Err(Error::param(format!("slice {slice_id} has no spots")));
        }
        if gene_names.len() != expression.cols() {
            return Err(Error::param(format!(
                "slice {slice_id}: {} gene names for {} columns",
                gene_names.len(),
                expression.cols()
            )));
        }
        if coords.shape() != (n, 2) {
            return Err(Error::Shape {
                op: "Slice::new coords",
                left: expression.shape(),
                right: coords.shape(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::param(format!(
                    "slice {slice_id}: {} labels for {n} spots",
                    l.len()
                )));
            }
        }
        expression.validate_finite("expression")?;
        coords.validate_finite("coords")?;
        Ok(Self {
            slice_id,
            expression,
            coords,
            gene_names,
            labels,
        })
    }

    pub fn n_spots(&self) -> usize {
        self.expression.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.expression.cols()
    }
}

/// Ordered slices sharing one gene vocabulary. Spot indices are global,
/// offset by the sizes of the preceding slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSliceDataset {
    slices: Vec<Slice>,
}

impl MultiSliceDataset {
    pub fn new(slices: Vec<Slice>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::param("a dataset needs at least one slice"))?;
        for s in &slices[1..] {
            if s.gene_names != first.gene_names {
                return Err(Error::param(format!(
                    "slice {} does not share the gene vocabulary of slice {}",
                    s.slice_id, first.slice_id
                )));
            }
        }
        Ok(Self { slices })
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn into_slices(self) -> Vec<Slice> {
        self.slices
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn n_spots(&self) -> usize {
        self.slices.iter().map(Slice::n_spots).sum()
    }

    pub fn n_genes(&self) -> usize {
        self.slices[0].n_genes()
    }

    pub fn gene_names(&self) -> &[String] {
        &self.slices[0].gene_names
    }

    /// Global index of each slice's first spot.
    pub fn offsets(&self) -> Vec<usize> {
        self.slices
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.n_spots();
                Some(o)
            })
            .collect()
    }

    /// Slice index of every global spot.
    pub fn membership(&self) -> Vec<usize> {
        self.slices
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat(i).take(s.n_spots()))
            .collect()
    }

    /// All spots stacked in global order.
    pub fn expression(&self) -> DenseMatrix {
        let parts: Vec<&DenseMatrix> = self.slices.iter().map(|s| &s.expression).collect();
        DenseMatrix::vstack(&parts).expect("slices share gene count")
    }

    /// Ground-truth labels in global order, if every slice has them.
    pub fn labels(&self) -> Option<Vec<String>> {
        let mut out = Vec::with_capacity(self.n_spots());
        for s in &self.slices {
            out.extend(s.labels.as_ref()?.iter().cloned());
        }
        Some(out)
    }

    pub(crate) fn map_slices(&self, f: impl Fn(&Slice) -> Result<Slice>) -> Result<Self> {
        Self::new(self.slices.iter().map(f).collect::<Result<Vec<_>>>()?)
    }
}
