use serde::{Deserialize, Serialize};

use super::EpochRecord;
use crate::error::{Error, Result};
use crate::losses::PrototypeSet;
use crate::model::{ModelParams, TENSOR_COUNT};
use crate::numeric::AdamState;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Complete training state after `epoch` finished epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub epoch: usize,
    pub params: ModelParams,
    pub adam: AdamState,
    pub prototypes: Option<PrototypeSet>,
    pub prototype_refreshes: usize,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn new(config_hash: String, params: ModelParams, adam: AdamState) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash,
            epoch: 0,
            params,
            adam,
            prototypes: None,
            prototype_refreshes: 0,
            history: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Parses and structurally validates a checkpoint document.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let c: Checkpoint = serde_json::from_slice(bytes)?;
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::State(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let cfg = &self.params.config;
        cfg.validate()?;
        if self.params.encoder.layers.len() != 2 {
            return Err(Error::State("checkpoint encoder must have 2 layers".into()));
        }
        let dims = [cfg.n_genes, cfg.hidden_dim, cfg.embedding_dim];
        let expected = [
            (dims[0], dims[1]),
            (1, dims[1]),
            (1, dims[1]),
            (1, dims[1]),
            (dims[1], dims[2]),
            (1, dims[2]),
            (1, dims[2]),
            (1, dims[2]),
            (dims[2], dims[1]),
            (1, dims[1]),
            (1, dims[1]),
            (1, dims[1]),
            (dims[1], dims[0]),
            (1, dims[0]),
        ];
        let tensors = self.params.tensors();
        debug_assert_eq!(tensors.len(), TENSOR_COUNT);
        for (i, (t, shape)) in tensors.iter().zip(expected).enumerate() {
            if t.shape() != shape {
                return Err(Error::State(format!(
                    "checkpoint tensor {i} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        self.params.validate_finite()?;
        let moments_ok = self.adam.first_moment.len() == TENSOR_COUNT
            && self.adam.second_moment.len() == TENSOR_COUNT
            && tensors
                .iter()
                .zip(self.adam.first_moment.iter().zip(&self.adam.second_moment))
                .all(|(t, (m, v))| m.shape() == t.shape() && v.shape() == t.shape());
        if !moments_ok {
            return Err(Error::State("checkpoint optimizer state does not mirror the parameters".into()));
        }
        for n in self.params.norms() {
            let c = n.gamma.cols();
            if n.running.mean.len() != c || n.running.var.len() != c {
                return Err(Error::State("checkpoint running statistics have the wrong width".into()));
            }
        }
        if self.history.len() != self.epoch {
            return Err(Error::State(format!(
                "checkpoint at epoch {} carries {} epoch records",
                self.epoch,
                self.history.len()
            )));
        }
        if let Some(p) = &self.prototypes {
            for g in &p.granularities {
                if g.centroids.cols() != dims[2] || g.assignments.iter().any(|&a| a >= g.centroids.rows()) {
                    return Err(Error::State("checkpoint prototypes are inconsistent".into()));
                }
            }
        }
        Ok(())
    }

    /// Rejects a checkpoint written under a different config or vocabulary.
    pub fn check_compatible(&self, config_hash: &str, n_genes: usize) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(Error::State(format!(
                "checkpoint config hash {} does not match the current config {config_hash}",
                self.config_hash
            )));
        }
        if self.params.config.n_genes != n_genes {
            return Err(Error::State(format!(
                "checkpoint expects {} genes, data has {n_genes}",
                self.params.config.n_genes
            )));
        }
        Ok(())
    }
}
