//! Flat TOML run configuration. Every key is optional; missing keys take the
//! library defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spotscape::data::{DEFAULT_HVG, DEFAULT_TARGET_SUM};
use spotscape::graph::MaskMode;
use spotscape::model::FinalActivation;
use spotscape::pipeline::{TrainConfig, TrainMode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<TrainMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_sc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_recon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_pcl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_ss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcl_granularities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcl_refresh_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ss_include_self: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_base: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub snn_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_mask_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_mask_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_mode: Option<MaskMode>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_activation: Option<FinalActivation>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub hvg_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preprocessed: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string() + &location(text, e.span())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn hvg_n(&self) -> usize {
        self.hvg_n.unwrap_or(DEFAULT_HVG)
    }

    pub fn target_sum(&self) -> f64 {
        self.target_sum.unwrap_or(DEFAULT_TARGET_SUM)
    }

    /// Library config with every unset key at its default. An unset learning
    /// rate is reported as `None` so the caller can decide to search for it.
    pub fn train_config(&self) -> (TrainConfig, Option<f64>) {
        let mut c = TrainConfig::default();
        let l = &mut c.loss;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(l.lambda_sc, self.lambda_sc);
        set!(l.lambda_recon, self.lambda_recon);
        set!(l.lambda_pcl, self.lambda_pcl);
        set!(l.lambda_ss, self.lambda_ss);
        set!(l.tau, self.tau);
        set!(l.top_k, self.top_k);
        set!(l.warmup_epochs, self.warmup_epochs);
        set!(l.pcl_granularities, self.pcl_granularities);
        set!(l.pcl_refresh_every, self.pcl_refresh_every);
        set!(l.ss_include_self, self.ss_include_self);
        set!(c.mode, self.mode);
        set!(c.epochs, self.epochs);
        set!(c.weight_decay, self.weight_decay);
        set!(c.seed, self.seed);
        set!(c.checkpoint_every, self.checkpoint_every);
        set!(c.snn_k, self.snn_k);
        set!(c.augment.feature_mask_rate, self.feature_mask_rate);
        set!(c.augment.edge_mask_rate, self.edge_mask_rate);
        set!(c.augment.mask_mode, self.mask_mode);
        set!(c.hidden_dim, self.hidden_dim);
        set!(c.embedding_dim, self.embedding_dim);
        set!(c.final_activation, self.final_activation);
        c.k_base = self.k_base;
        if let Some(lr) = self.learning_rate {
            c.learning_rate = lr;
        }
        (c, self.learning_rate)
    }

    /// Fully explicit config that reproduces `train` when read back.
    pub fn resolved(train: &TrainConfig, hvg_n: usize, target_sum: f64, preprocessed: bool, inputs: &[PathBuf]) -> Self {
        let l = &train.loss;
        Self {
            mode: Some(train.mode),
            epochs: Some(train.epochs),
            learning_rate: Some(train.learning_rate),
            weight_decay: Some(train.weight_decay),
            seed: Some(train.seed),
            checkpoint_every: Some(train.checkpoint_every),
            lambda_sc: Some(l.lambda_sc),
            lambda_recon: Some(l.lambda_recon),
            lambda_pcl: Some(l.lambda_pcl),
            lambda_ss: Some(l.lambda_ss),
            tau: Some(l.tau),
            top_k: Some(l.top_k),
            warmup_epochs: Some(l.warmup_epochs),
            pcl_granularities: Some(l.pcl_granularities.clone()),
            pcl_refresh_every: Some(l.pcl_refresh_every),
            ss_include_self: Some(l.ss_include_self),
            k_base: train.k_base,
            snn_k: Some(train.snn_k),
            feature_mask_rate: Some(train.augment.feature_mask_rate),
            edge_mask_rate: Some(train.augment.edge_mask_rate),
            mask_mode: Some(train.augment.mask_mode),
            hidden_dim: Some(train.hidden_dim),
            embedding_dim: Some(train.embedding_dim),
            final_activation: Some(train.final_activation),
            hvg_n: Some(hvg_n),
            target_sum: Some(target_sum),
            preprocessed: Some(preprocessed),
            inputs: Some(inputs.to_vec()),
            out: None,
        }
    }
}

fn location(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
