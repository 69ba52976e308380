use serde::{Deserialize, Serialize};

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Running per-column mean and (biased) variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub populated: bool,
}

impl RunningStats {
    pub fn new(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            var: vec![1.0; cols],
            populated: false,
        }
    }

    /// Exponential moving average with momentum [`BN_MOMENTUM`].
    pub fn update(&mut self, batch: &BatchStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        self.populated = true;
    }
}

/// Batch mean and biased variance of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    pub fn of(x: &DenseMatrix) -> Self {
        let n = x.rows() as f64;
        let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(row) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        Self { mean, var }
    }
}

pub(crate) fn check_affine(x: &DenseMatrix, gamma: &DenseMatrix, beta: &DenseMatrix) -> Result<()> {
    if gamma.shape() != (1, x.cols()) || beta.shape() != (1, x.cols()) {
        return Err(Error::Shape {
            op: "batch_norm",
            left: x.shape(),
            right: gamma.shape(),
        });
    }
    Ok(())
}

/// Column-wise batch normalization outside of any gradient tape.
///
/// Train mode normalizes by the batch statistics and folds them into
/// `running`; eval mode uses `running`, which must have been populated.
pub fn batch_norm(
    x: &DenseMatrix,
    gamma: &DenseMatrix,
    beta: &DenseMatrix,
    running: &mut RunningStats,
    mode: Mode,
) -> Result<DenseMatrix> {
    check_affine(x, gamma, beta)?;
    let (mean, var) = match mode {
        Mode::Train => {
            if x.rows() == 0 {
                return Err(Error::param("batch norm over an empty batch"));
            }
            let stats = BatchStats::of(x);
            running.update(&stats);
            (stats.mean, stats.var)
        }
        Mode::Eval => {
            if !running.populated || running.mean.len() != x.cols() {
                return Err(Error::State(
                    "batch norm eval mode requires populated running statistics".into(),
                ));
            }
            (running.mean.clone(), running.var.clone())
        }
    };
    Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |r, c| {
        (x.get(r, c) - mean[c]) / (var[c] + BN_EPS).sqrt() * gamma.get(0, c) + beta.get(0, c)
    }))
}
