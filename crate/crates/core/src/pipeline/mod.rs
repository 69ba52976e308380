//! Single- and multi-slice training loops, checkpoints, and the inference
//! products (embeddings and imputed expression).

mod checkpoint;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};

use crate::data::MultiSliceDataset;
use crate::error::{Error, Result};
use crate::eval::{LrSearchResult, MetricsReport};
use crate::graph::{augment, build_multi_slice_graph, AugmentSettings, AugmentedView, SnnGraph, DEFAULT_SNN_K};
use crate::losses::{
    compute_prototypes, prototypical, reconstruction, similarity_scaling, similarity_telescope, LossParts,
    LossWeights, PrototypeSet,
};
use crate::model::{
    decode, decode_embeddings, encode, infer_embeddings, init_params, FinalActivation, ModelConfig, ModelParams, ParamVars,
    DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN_DIM,
};
use crate::numeric::{adam_step, BatchStats, DenseMatrix, Mode, SeededRng, Tape, Var};

pub const DEFAULT_EPOCHS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub augment: AugmentSettings,
    pub snn_k: usize,
    /// Expected domain count; sets the prototype granularities.
    pub k_base: Option<usize>,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub final_activation: FinalActivation,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Single,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            seed: 0,
            loss: LossWeights::default(),
            augment: AugmentSettings::default(),
            snn_k: DEFAULT_SNN_K,
            k_base: None,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            final_activation: FinalActivation::Relu,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::param(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.snn_k == 0 {
            return Err(Error::param("snn_k must be >= 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::param("checkpoint_every must be >= 1"));
        }
        for (name, rate) in [
            ("feature_mask_rate", self.augment.feature_mask_rate),
            ("edge_mask_rate", self.augment.edge_mask_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::param(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        if let Some(k) = self.k_base {
            if k < 2 {
                return Err(Error::param(format!("k_base must be >= 2, got {k}")));
            }
        }
        if self.mode == TrainMode::Multi && self.epochs > self.loss.warmup_epochs && self.k_base.is_none() {
            return Err(Error::param("k_base is required once the prototypical loss is active"));
        }
        self.loss.validate()?;
        self.model_config(1).validate()
    }

    pub fn model_config(&self, n_genes: usize) -> ModelConfig {
        ModelConfig {
            n_genes,
            hidden_dim: self.hidden_dim,
            embedding_dim: self.embedding_dim,
            final_activation: self.final_activation,
        }
    }
}

/// Hex SHA-256 of the canonical JSON of the config and the gene vocabulary.
pub fn config_hash(config: &TrainConfig, gene_names: &[String]) -> String {
    let canonical = serde_json::to_vec(&(config, gene_names)).expect("config serializes");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}

/// Unweighted components and the weighted total of one epoch. `pcl` is 0
/// before warm-up and `ss` is 0 in single mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub parts: LossParts,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub mode: TrainMode,
    pub seed: u64,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub prototype_refreshes: usize,
    pub final_loss: f64,
    pub metrics: Option<MetricsReport>,
    pub lr_search: Option<LrSearchResult>,
    /// Excluded from the document so identical runs serialize identically.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Builds the spatial graph of a dataset with the configured `snn_k`.
pub fn build_graph(dataset: &MultiSliceDataset, config: &TrainConfig) -> Result<SnnGraph> {
    build_multi_slice_graph(dataset, config.snn_k)
}

/// Checks the config and that `graph` and `dataset` describe the same spots,
/// plus the multi-mode preconditions.
pub fn validate_inputs(dataset: &MultiSliceDataset, graph: &SnnGraph, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if graph.node_count() != dataset.n_spots() || graph.membership() != dataset.membership() {
        return Err(Error::param("graph does not match the dataset's spots and slices"));
    }
    if config.mode == TrainMode::Multi {
        if dataset.n_slices() < 2 {
            return Err(Error::param(format!(
                "multi mode needs at least 2 slices, got {}",
                dataset.n_slices()
            )));
        }
        if let Some(s) = dataset.slices().iter().find(|s| s.n_spots() < config.loss.top_k) {
            return Err(Error::param(format!(
                "slice {} has {} spots, fewer than top_k = {}",
                s.slice_id,
                s.n_spots(),
                config.loss.top_k
            )));
        }
    }
    Ok(())
}

fn epoch_error(epoch: usize, err: Error) -> Error {
    match err {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
        Error::DegenerateRow { row, eps } => {
            Error::Numeric(format!("epoch {epoch}: embedding row {row} has norm below {eps}"))
        }
        other => other,
    }
}

fn weighted(tape: &mut Tape, acc: Option<Var>, term: Var, weight: f64) -> Result<Option<Var>> {
    let scaled = tape.scale(term, weight)?;
    Ok(Some(match acc {
        Some(a) => tape.add(a, scaled)?,
        None => scaled,
    }))
}

/// Encoder and decoder outputs of both augmented views.
pub struct ViewsForward {
    pub embeddings: [Var; 2],
    pub reconstructions: [Var; 2],
    /// Batch statistics in running-stat order, view 1 then view 2.
    pub stats: Vec<BatchStats>,
}

/// Records the train-mode forward pass of both views.
pub fn forward_views(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    views: [&AugmentedView; 2],
) -> Result<ViewsForward> {
    let mut stats = Vec::new();
    let mut out = Vec::with_capacity(2);
    for v in views {
        let op = Arc::new(v.normalized_operator());
        let x = tape.constant(v.masked_features.clone());
        let z = encode(tape, params, vars, x, &op, Mode::Train)?;
        let r = decode(tape, params, vars, z.output, Mode::Train)?;
        stats.extend(z.stats);
        stats.extend(r.stats);
        out.push((z.output, r.output));
    }
    Ok(ViewsForward {
        embeddings: [out[0].0, out[1].0],
        reconstructions: [out[0].1, out[1].1],
        stats,
    })
}

/// Weighted training objective on recorded views. Single mode sums the
/// telescope and reconstruction terms; multi mode adds similarity scaling and,
/// when `prototypes` is given, the prototypical term.
pub fn objective(
    tape: &mut Tape,
    fwd: &ViewsForward,
    target: Var,
    membership: &[usize],
    mode: TrainMode,
    weights: &LossWeights,
    prototypes: Option<&PrototypeSet>,
) -> Result<(Var, LossParts)> {
    let [z1, z2] = fwd.embeddings;
    let [r1, r2] = fwd.reconstructions;
    let (sc, h) = similarity_telescope(tape, z1, z2)?;
    let recon = reconstruction(tape, target, r1, r2)?;
    let mut total = weighted(tape, None, sc, weights.lambda_sc)?;
    total = weighted(tape, total, recon, weights.lambda_recon)?;
    let mut parts = LossParts {
        sc: tape.scalar(sc),
        recon: tape.scalar(recon),
        ..LossParts::default()
    };
    if mode == TrainMode::Multi {
        let ss = similarity_scaling(tape, h, membership, weights.top_k, weights.ss_include_self)?;
        parts.ss = tape.scalar(ss);
        total = weighted(tape, total, ss, weights.lambda_ss)?;
        if let Some(protos) = prototypes {
            let pcl = prototypical(tape, z1, protos, weights.tau)?;
            parts.pcl = tape.scalar(pcl);
            total = weighted(tape, total, pcl, weights.lambda_pcl)?;
        }
    }
    Ok((total.expect("at least one term"), parts))
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    graph: &'a SnnGraph,
    features: DenseMatrix,
    membership: Vec<usize>,
    state: Checkpoint,
}

impl Trainer<'_> {
    fn epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let cfg = self.config;
        let w = &cfg.loss;
        let aug = SeededRng::new(cfg.seed, &format!("augment/{epoch}"));
        let v1 = augment(self.graph, &self.features, &cfg.augment, &mut aug.derive("view1"))?;
        let v2 = augment(self.graph, &self.features, &cfg.augment, &mut aug.derive("view2"))?;
        let mut tape = Tape::new();
        let vars = self.state.params.register(&mut tape);
        let target = tape.constant(self.features.clone());
        let fwd = forward_views(&mut tape, &self.state.params, &vars, [&v1, &v2])?;

        let pcl_active = cfg.mode == TrainMode::Multi && epoch >= w.warmup_epochs;
        if pcl_active {
            let due = (epoch - w.warmup_epochs) % w.pcl_refresh_every == 0;
            if due || self.state.prototypes.is_none() {
                let k_base = cfg.k_base.ok_or_else(|| Error::param("k_base is required for the prototypical loss"))?;
                let rng = SeededRng::new(cfg.seed, &format!("prototypes/{epoch}"));
                let z2 = tape.value(fwd.embeddings[1]);
                self.state.prototypes = Some(compute_prototypes(z2, k_base, &w.pcl_granularities, &rng)?);
                self.state.prototype_refreshes += 1;
            }
        }
        let protos = if pcl_active { self.state.prototypes.as_ref() } else { None };
        let (total, parts) = objective(&mut tape, &fwd, target, &self.membership, cfg.mode, w, protos)?;
        let total_value = tape.scalar(total);
        if !total_value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {total_value}")));
        }
        let stats = fwd.stats;
        let grads = tape.gradients_of(total, &vars.0)?;
        drop(tape);
        let state = &mut self.state;
        adam_step(
            &mut state.params.tensors_mut(),
            &grads,
            &mut state.adam,
            cfg.learning_rate,
            cfg.weight_decay,
        )?;
        let mut norms = state.params.norms_mut();
        let per_view = norms.len();
        for (i, s) in stats.iter().enumerate() {
            norms[i % per_view].running.update(s);
        }
        Ok(EpochRecord {
            epoch,
            parts,
            total: total_value,
        })
    }
}

/// Trains from scratch or from `resume`, calling `on_checkpoint` every
/// `checkpoint_every` epochs and after the last one. Returns the final state.
pub fn train_with(
    dataset: &MultiSliceDataset,
    graph: &SnnGraph,
    config: &TrainConfig,
    resume: Option<Checkpoint>,
    on_checkpoint: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    validate_inputs(dataset, graph, config)?;
    let hash = config_hash(config, dataset.gene_names());
    let state = match resume {
        Some(c) => {
            c.check_compatible(&hash, dataset.n_genes())?;
            c
        }
        None => {
            let (params, adam) = init_params(&config.model_config(dataset.n_genes()), config.seed)?;
            Checkpoint::new(hash, params, adam)
        }
    };
    let mut trainer = Trainer {
        config,
        graph,
        features: dataset.expression(),
        membership: dataset.membership(),
        state,
    };
    let start = trainer.state.epoch;
    for epoch in start..config.epochs {
        let record = trainer.epoch(epoch).map_err(|e| epoch_error(epoch, e))?;
        log::debug!("epoch {epoch}: total {:.6}", record.total);
        trainer.state.history.push(record);
        trainer.state.epoch = epoch + 1;
        if trainer.state.epoch % config.checkpoint_every == 0 || trainer.state.epoch == config.epochs {
            on_checkpoint(&trainer.state)?;
        }
    }
    Ok(trainer.state)
}

fn report_of(state: &Checkpoint, config: &TrainConfig, started: Instant) -> TrainingReport {
    TrainingReport {
        mode: config.mode,
        seed: config.seed,
        config: config.clone(),
        epochs: state.history.clone(),
        prototype_refreshes: state.prototype_refreshes,
        final_loss: state.history.last().map_or(f64::NAN, |r| r.total),
        metrics: None,
        lr_search: None,
        wall_time_secs: started.elapsed().as_secs_f64(),
    }
}

/// Trains in the configured mode without checkpoint callbacks.
pub fn train(dataset: &MultiSliceDataset, graph: &SnnGraph, config: &TrainConfig) -> Result<(ModelParams, TrainingReport)> {
    let started = Instant::now();
    let state = train_with(dataset, graph, config, None, &mut |_| Ok(()))?;
    let report = report_of(&state, config, started);
    Ok((state.params, report))
}

/// Similarity telescope plus reconstruction.
pub fn train_single(
    dataset: &MultiSliceDataset,
    graph: &SnnGraph,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainingReport)> {
    train(dataset, graph, &TrainConfig { mode: TrainMode::Single, ..config.clone() })
}

/// Adds similarity scaling and, after warm-up, the prototypical loss.
pub fn train_multi(
    dataset: &MultiSliceDataset,
    graph: &SnnGraph,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainingReport)> {
    train(dataset, graph, &TrainConfig { mode: TrainMode::Multi, ..config.clone() })
}

/// Training report for a finished state, e.g. after resuming.
pub fn report_for(state: &Checkpoint, config: &TrainConfig) -> TrainingReport {
    report_of(state, config, Instant::now())
}

/// Eval-mode embeddings of the unaugmented dataset.
pub fn embed(params: &ModelParams, dataset: &MultiSliceDataset, graph: &SnnGraph) -> Result<DenseMatrix> {
    infer_embeddings(params, &dataset.expression(), graph)
}

/// Decoder reconstruction of the eval-mode embeddings.
pub fn impute_expression(params: &ModelParams, dataset: &MultiSliceDataset, graph: &SnnGraph) -> Result<DenseMatrix> {
    decode_embeddings(params, &embed(params, dataset, graph)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, preprocess, SyntheticSpec};

    fn fixture(slices: usize, spots: usize) -> (MultiSliceDataset, SnnGraph) {
        let data = generate_synthetic(&SyntheticSpec {
            spots_per_slice: spots,
            genes: 8,
            domains: 2,
            slices,
            marker_genes_per_domain: 2,
            base_rate: 4.0,
            batch_shift: 0.3,
            seed: 1,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let ds = preprocess(&data.dataset, 8, 1e4).unwrap();
        let graph = build_multi_slice_graph(&ds, 3).unwrap();
        (ds, graph)
    }

    fn small(mode: TrainMode, epochs: usize) -> TrainConfig {
        TrainConfig {
            mode,
            epochs,
            hidden_dim: 16,
            embedding_dim: 8,
            k_base: Some(2),
            learning_rate: 0.01,
            loss: LossWeights {
                warmup_epochs: 3,
                top_k: 2,
                ..LossWeights::default()
            },
            checkpoint_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_objective_leaves_parameters() {
        let (ds, graph) = fixture(1, 12);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            loss: LossWeights {
                lambda_sc: 0.0,
                lambda_recon: 0.0,
                ..LossWeights::default()
            },
            ..small(TrainMode::Single, 4)
        };
        let (params, _) = train(&ds, &graph, &cfg).unwrap();
        let (init, _) = init_params(&cfg.model_config(8), cfg.seed).unwrap();
        assert_eq!(params.tensors(), init.tensors());
    }

    #[test]
    fn single_mode_loss_decreases() {
        let (ds, graph) = fixture(1, 12);
        let (_, report) = train(&ds, &graph, &small(TrainMode::Single, 5)).unwrap();
        assert_eq!(report.epochs.len(), 5);
        let totals: Vec<f64> = report.epochs.iter().map(|e| e.total).collect();
        let drops = totals.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(drops >= 3, "{totals:?}");
        assert!(totals[4] < totals[0]);
        assert!(report.epochs.iter().all(|e| e.parts.pcl == 0.0 && e.parts.ss == 0.0));
    }

    #[test]
    fn identical_seeds_identical_reports() {
        let (ds, graph) = fixture(2, 12);
        let cfg = small(TrainMode::Multi, 5);
        let (pa, ra) = train(&ds, &graph, &cfg).unwrap();
        let (pb, rb) = train(&ds, &graph, &cfg).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    }

    #[test]
    fn warmup_gate_and_refreshes() {
        let (ds, graph) = fixture(2, 12);
        let (_, report) = train(&ds, &graph, &small(TrainMode::Multi, 6)).unwrap();
        for e in &report.epochs {
            if e.epoch < 3 {
                assert_eq!(e.parts.pcl, 0.0);
            } else {
                assert!(e.parts.pcl > 0.0);
            }
            assert!(e.parts.ss >= 0.0);
        }
        assert_eq!(report.prototype_refreshes, 3);
        let cfg = TrainConfig {
            loss: LossWeights {
                warmup_epochs: 10,
                top_k: 2,
                ..LossWeights::default()
            },
            ..small(TrainMode::Multi, 6)
        };
        let (_, report) = train(&ds, &graph, &cfg).unwrap();
        assert_eq!(report.prototype_refreshes, 0);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let (ds, graph) = fixture(2, 12);
        let cfg = small(TrainMode::Multi, 6);
        let mut saved = Vec::new();
        let full = train_with(&ds, &graph, &cfg, None, &mut |c| {
            saved.push(c.to_json()?);
            Ok(())
        })
        .unwrap();
        assert_eq!(saved.len(), 3);
        let at4 = Checkpoint::from_json(&saved[1]).unwrap();
        assert_eq!(at4.epoch, 4);
        let resumed = train_with(&ds, &graph, &cfg, Some(at4), &mut |_| Ok(())).unwrap();
        assert_eq!(resumed.history, full.history);
        assert_eq!(resumed.params, full.params);
        let other = TrainConfig { seed: 9, ..cfg.clone() };
        let stale = Checkpoint::from_json(&saved[0]).unwrap();
        assert!(train_with(&ds, &graph, &other, Some(stale), &mut |_| Ok(())).is_err());
    }

    #[test]
    fn multi_mode_preconditions() {
        let (ds, graph) = fixture(1, 12);
        assert!(train(&ds, &graph, &small(TrainMode::Multi, 2)).is_err());
        let (ds2, graph2) = fixture(2, 12);
        let cfg = TrainConfig {
            loss: LossWeights {
                top_k: 13,
                warmup_epochs: 3,
                ..LossWeights::default()
            },
            ..small(TrainMode::Multi, 2)
        };
        assert!(train(&ds2, &graph2, &cfg).is_err());
    }

    #[test]
    fn inference_products() {
        let (ds, graph) = fixture(1, 12);
        let cfg = small(TrainMode::Single, 3);
        let (params, _) = train(&ds, &graph, &cfg).unwrap();
        let z = embed(&params, &ds, &graph).unwrap();
        assert_eq!(z.shape(), (12, 8));
        assert_eq!(z, embed(&params.clone(), &ds, &graph).unwrap());
        let x = impute_expression(&params, &ds, &graph).unwrap();
        assert_eq!(x.shape(), (12, 8));
        assert_eq!(x, impute_expression(&params, &ds, &graph).unwrap());
    }
}
