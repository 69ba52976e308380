use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spotscape::data::io::{load_slice, numeric_csv_bytes, read_labels_csv, slice_file_bytes, string_column_bytes};
use spotscape::data::{concatenate_slices, generate_synthetic, preprocess, MultiSliceDataset, SyntheticSpec};
use spotscape::eval::{
    ari, clustering_accuracy, encode_labels, kmeans, label_transfer_ari, lr_search_by_silhouette, nearest_reference,
    nmi, silhouette, silhouette_batch, MetricsReport, EVAL_RESTARTS, LR_GRID,
};
use spotscape::numeric::{DenseMatrix, SeededRng};
use spotscape::pipeline::{
    build_graph, config_hash, embed, impute_expression, report_for, train_with, validate_inputs, Checkpoint,
    TrainConfig,
};
use spotscape::Error;

use crate::args::{AlignArgs, Cli, Command, EvaluateArgs, ImputeArgs, PreprocessArgs, SynthArgs, TrainArgs};
use crate::bundle::{Bundle, Manifest};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::*;

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<Manifest> {
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be >= 1"));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
    let g = Globals {
        seed: cli.seed,
        out: cli.out,
    };
    match &cli.command {
        Command::Synth(a) => synth(&g, a),
        Command::Preprocess(a) => preprocess_cmd(&g, a),
        Command::Train(a) => train(&g, a),
        Command::Evaluate(a) => evaluate(&g, a),
        Command::Align(a) => align(&g, a),
        Command::Impute(a) => impute(&g, a),
    }
}

fn out_dir(g: &Globals, run: &RunConfig) -> PathBuf {
    g.out
        .clone()
        .or_else(|| run.out.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn open_input(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))
}

fn read_embeddings_file(path: &Path) -> CliResult<DenseMatrix> {
    Ok(read_embeddings(open_input(path)?, &path.display().to_string())?)
}

fn read_labels_file(path: &Path, rows: usize) -> CliResult<Vec<String>> {
    let labels = read_labels_csv(open_input(path)?, &path.display().to_string())?;
    if labels.len() != rows {
        return Err(CliError::usage(format!(
            "{} has {} labels for {rows} embedding rows",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels)
}

fn load_run_config(path: Option<&PathBuf>) -> CliResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::load(p))
}

fn load_inputs(paths: &[PathBuf]) -> CliResult<MultiSliceDataset> {
    if paths.is_empty() {
        return Err(CliError::usage("no input slice directories given"));
    }
    if let Some(p) = paths.iter().find(|p| !p.is_dir()) {
        return Err(CliError::usage(format!("input {} is not a directory", p.display())));
    }
    let slices = paths.iter().map(|p| load_slice(p)).collect::<spotscape::Result<Vec<_>>>()?;
    let mut seen = BTreeSet::new();
    if let Some(s) = slices.iter().find(|s| !seen.insert(s.slice_id.clone())) {
        return Err(CliError::usage(format!("slice name {:?} appears twice", s.slice_id)));
    }
    Ok(concatenate_slices(slices)?)
}

fn prepare(dataset: MultiSliceDataset, run: &RunConfig, preprocessed: bool) -> CliResult<MultiSliceDataset> {
    if preprocessed {
        return Ok(dataset);
    }
    let hvg = run.hvg_n();
    if hvg == 0 {
        return Err(CliError::Config("hvg_n must be >= 1".into()));
    }
    if hvg > dataset.n_genes() {
        log::warn!(
            "hvg_n = {hvg} exceeds the {} shared genes; keeping all of them",
            dataset.n_genes()
        );
    }
    Ok(preprocess(&dataset, hvg, run.target_sum())?)
}

fn distinct(labels: &[String]) -> usize {
    labels.iter().collect::<BTreeSet<_>>().len()
}

/// Fills in `k_base` from the ground truth when the config leaves it unset.
fn resolve_k_base(cfg: &mut TrainConfig, dataset: &MultiSliceDataset) {
    if cfg.k_base.is_none() {
        if let Some(k) = dataset.labels().map(|t| distinct(&t)).filter(|&k| k >= 2) {
            log::info!("k_base = {k} from the ground-truth labels");
            cfg.k_base = Some(k);
        }
    }
}

/// Validates everything that does not depend on the data, before any input
/// is read. `k_base` may still come from the labels.
fn validate_early(cfg: &TrainConfig) -> CliResult<()> {
    TrainConfig {
        k_base: cfg.k_base.or(Some(2)),
        ..cfg.clone()
    }
    .validate()
    .map_err(|e| CliError::Config(e.to_string()))
}

fn slice_ids(dataset: &MultiSliceDataset) -> Vec<String> {
    let names: Vec<&String> = dataset.slices().iter().map(|s| &s.slice_id).collect();
    dataset.membership().iter().map(|&m| names[m].clone()).collect()
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    Checkpoint::from_json(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn synth(g: &Globals, a: &SynthArgs) -> CliResult<Manifest> {
    let spec = SyntheticSpec {
        spots_per_slice: a.spots,
        genes: a.genes,
        domains: a.domains,
        slices: a.slices,
        batch_shift: a.batch_shift,
        seed: g.seed.unwrap_or(0),
        marker_genes_per_domain: a.markers,
        marker_fold: a.marker_fold,
        ..SyntheticSpec::default()
    };
    spec.validate()?;
    let data = generate_synthetic(&spec).map_err(CliError::runtime)?;
    let mut bundle = Bundle::create(&out_dir(g, &RunConfig::default()))?;
    for slice in data.dataset.slices() {
        for (name, bytes) in slice_file_bytes(slice)? {
            bundle.write(&format!("{}/{name}", slice.slice_id), &bytes)?;
        }
    }
    bundle.finish()
}

pub fn preprocess_cmd(g: &Globals, a: &PreprocessArgs) -> CliResult<Manifest> {
    let run = load_run_config(a.config.as_ref())?;
    let dataset = prepare(load_inputs(&a.inputs)?, &run, false)?;
    let mut bundle = Bundle::create(&out_dir(g, &run))?;
    for slice in dataset.slices() {
        for (name, bytes) in slice_file_bytes(slice)? {
            bundle.write(&format!("{}/{name}", slice.slice_id), &bytes)?;
        }
    }
    bundle.finish()
}

/// Which label-based metrics to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelMetrics {
    pub ari: bool,
    pub nmi: bool,
    pub ca: bool,
}

impl LabelMetrics {
    pub const ALL: Self = Self {
        ari: true,
        nmi: true,
        ca: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub clusters: Vec<usize>,
    pub report: MetricsReport,
}

/// K-means with `k` clusters on the embeddings, then every metric the inputs
/// support. silhouette_batch needs both ground truth and at least 2 slices.
pub fn evaluate_embeddings(
    z: &DenseMatrix,
    truth: Option<&[String]>,
    slices: Option<&[String]>,
    k: usize,
    seed: u64,
    select: LabelMetrics,
) -> spotscape::Result<Evaluation> {
    let mut rng = SeededRng::new(seed, "evaluate/kmeans");
    let clusters = kmeans(z, k, &mut rng, EVAL_RESTARTS)?.labels;
    let score = |on: bool, f: fn(&[String], &[usize]) -> spotscape::Result<f64>| -> spotscape::Result<Option<f64>> {
        match truth {
            Some(t) if on => f(t, &clusters).map(Some),
            _ => Ok(None),
        }
    };
    let ari_v = score(select.ari, |t, c| ari(t, c))?;
    let nmi_v = score(select.nmi, |t, c| nmi(t, c))?;
    let ca_v = score(select.ca, |t, c| clustering_accuracy(t, c))?;
    let batch = match (truth, slices) {
        (Some(t), Some(s)) if distinct(s) >= 2 => {
            let (membership, _) = encode_labels(s);
            match silhouette_batch(z, t, &membership) {
                Ok(b) => {
                    if !b.skipped.is_empty() {
                        log::warn!("silhouette_batch skipped domains seen in one slice only: {:?}", b.skipped);
                    }
                    Some(b.score)
                }
                Err(Error::UndefinedMetric(m)) => {
                    log::warn!("silhouette_batch undefined: {m}");
                    None
                }
                Err(e) => return Err(e),
            }
        }
        _ => None,
    };
    let report = MetricsReport {
        ari: ari_v,
        nmi: nmi_v,
        ca: ca_v,
        silhouette: Some(silhouette(z, &clusters)?),
        silhouette_batch: batch,
        ltari: None,
        k,
        seed,
    };
    Ok(Evaluation { clusters, report })
}

pub fn train(g: &Globals, a: &TrainArgs) -> CliResult<Manifest> {
    let run = load_run_config(a.config.as_ref())?;
    let inputs = if a.inputs.is_empty() {
        run.inputs.clone().unwrap_or_default()
    } else {
        a.inputs.clone()
    };
    let preprocessed = a.preprocessed || run.preprocessed.unwrap_or(false);
    let (mut cfg, lr) = run.train_config();
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if a.lr_search && lr.is_some() {
        return Err(CliError::usage("--lr-search needs learning_rate to be unset"));
    }
    validate_early(&cfg)?;

    let dataset = prepare(load_inputs(&inputs)?, &run, preprocessed)?;
    resolve_k_base(&mut cfg, &dataset);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if a.lr_search && cfg.k_base.is_none() {
        return Err(CliError::Config("--lr-search needs k_base or labelled inputs".into()));
    }
    let graph = build_graph(&dataset, &cfg)?;
    validate_inputs(&dataset, &graph, &cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let resume = a.resume.as_deref().map(read_checkpoint).transpose()?;
    let mut bundle = Bundle::create(&out_dir(g, &run))?;

    let lr_search = if a.lr_search {
        let r = lr_search_by_silhouette(&dataset, &graph, &cfg, &LR_GRID).map_err(CliError::runtime)?;
        log::info!("selected learning rate {}", r.best_learning_rate);
        cfg.learning_rate = r.best_learning_rate;
        Some(r)
    } else {
        None
    };
    if let Some(c) = &resume {
        c.check_compatible(&config_hash(&cfg, dataset.gene_names()), dataset.n_genes())?;
    }

    let state = train_with(&dataset, &graph, &cfg, resume, &mut |c| {
        bundle.put(CHECKPOINT_JSON, &c.to_json()?)
    })
    .map_err(CliError::runtime)?;

    let z = embed(&state.params, &dataset, &graph).map_err(CliError::runtime)?;
    let z_bytes = embeddings_bytes(&z)?;
    bundle.write(EMBEDDINGS_CSV, &z_bytes)?;
    // Metrics describe the exported 9-digit embeddings, so re-evaluating the
    // bundle reproduces them exactly.
    let z = read_embeddings(&z_bytes[..], EMBEDDINGS_CSV).map_err(CliError::runtime)?;
    let ids = slice_ids(&dataset);
    bundle.write(SLICES_CSV, &slices_bytes(&ids)?)?;
    let truth = dataset.labels();
    if let Some(t) = &truth {
        bundle.write(LABELS_CSV, &string_column_bytes("label", t)?)?;
    }
    let mut report = report_for(&state, &cfg);
    report.lr_search = lr_search;
    if let Some(k) = cfg.k_base {
        let ev = evaluate_embeddings(&z, truth.as_deref(), Some(&ids), k, cfg.seed, LabelMetrics::ALL)?;
        bundle.write(CLUSTERS_CSV, &clusters_bytes(&ev.clusters)?)?;
        bundle.write_json(METRICS_JSON, &ev.report)?;
        report.metrics = Some(ev.report);
    } else {
        log::warn!("no k_base and no labels: skipping clustering and metrics");
    }
    bundle.write_json(REPORT_JSON, &report)?;
    let resolved = RunConfig::resolved(&cfg, run.hvg_n(), run.target_sum(), preprocessed, &inputs);
    bundle.write(RUN_CONFIG_TOML, resolved.to_toml().as_bytes())?;
    bundle.finish()
}

pub fn evaluate(g: &Globals, a: &EvaluateArgs) -> CliResult<Manifest> {
    let z = read_embeddings_file(&a.embeddings)?;
    let requested = a.ari || a.nmi || a.ca;
    if requested && a.labels.is_none() {
        return Err(CliError::usage("--ari, --nmi and --ca need --labels"));
    }
    let truth = a.labels.as_deref().map(|p| read_labels_file(p, z.rows())).transpose()?;
    let slices = match a.slices.as_deref() {
        Some(p) => {
            let s = read_slices(open_input(p)?, &p.display().to_string())?;
            if s.len() != z.rows() {
                return Err(CliError::usage(format!(
                    "{} has {} entries for {} embedding rows",
                    p.display(),
                    s.len(),
                    z.rows()
                )));
            }
            Some(s)
        }
        None => None,
    };
    let k = match (a.k, &truth) {
        (Some(k), _) => k,
        (None, Some(t)) => distinct(t),
        (None, None) => return Err(CliError::usage("--k is required without --labels")),
    };
    if k < 2 || k > z.rows() {
        return Err(CliError::usage(format!("--k must lie in [2, {}], got {k}", z.rows())));
    }
    let select = if requested {
        LabelMetrics {
            ari: a.ari,
            nmi: a.nmi,
            ca: a.ca,
        }
    } else {
        LabelMetrics::ALL
    };
    let ev = evaluate_embeddings(&z, truth.as_deref(), slices.as_deref(), k, g.seed.unwrap_or(0), select)
        .map_err(CliError::runtime)?;
    let mut bundle = Bundle::create(&out_dir(g, &RunConfig::default()))?;
    bundle.write(CLUSTERS_CSV, &clusters_bytes(&ev.clusters)?)?;
    bundle.write_json(METRICS_JSON, &ev.report)?;
    bundle.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub query: usize,
    pub reference: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub matches: Vec<Match>,
    pub ltari: Option<f64>,
}

pub fn align(g: &Globals, a: &AlignArgs) -> CliResult<Manifest> {
    let reference = read_embeddings_file(&a.reference)?;
    let ref_labels = read_labels_file(&a.reference_labels, reference.rows())?;
    let query = read_embeddings_file(&a.query)?;
    if query.cols() != reference.cols() {
        return Err(CliError::usage(format!(
            "query embeddings have {} dimensions, reference has {}",
            query.cols(),
            reference.cols()
        )));
    }
    let truth = a.query_labels.as_deref().map(|p| read_labels_file(p, query.rows())).transpose()?;
    let nearest = nearest_reference(&reference, &query).map_err(CliError::runtime)?;
    let transferred: Vec<String> = nearest.iter().map(|&j| ref_labels[j].clone()).collect();
    let ltari = truth
        .as_deref()
        .map(|t| label_transfer_ari(&reference, &ref_labels, &query, t))
        .transpose()
        .map_err(CliError::runtime)?;
    let alignment = Alignment {
        matches: nearest
            .iter()
            .zip(&transferred)
            .enumerate()
            .map(|(query, (&reference, label))| Match {
                query,
                reference,
                label: label.clone(),
            })
            .collect(),
        ltari,
    };
    let mut bundle = Bundle::create(&out_dir(g, &RunConfig::default()))?;
    bundle.write_json(ALIGNMENT_JSON, &alignment)?;
    bundle.write(TRANSFERRED_CSV, &string_column_bytes("label", &transferred)?)?;
    bundle.finish()
}

pub fn impute(g: &Globals, a: &ImputeArgs) -> CliResult<Manifest> {
    let run = load_run_config(a.config.as_ref())?;
    let inputs = if a.inputs.is_empty() {
        run.inputs.clone().unwrap_or_default()
    } else {
        a.inputs.clone()
    };
    let preprocessed = a.preprocessed || run.preprocessed.unwrap_or(false);
    let (mut cfg, _) = run.train_config();
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    validate_early(&cfg)?;
    let checkpoint = read_checkpoint(&a.checkpoint)?;
    let dataset = prepare(load_inputs(&inputs)?, &run, preprocessed)?;
    resolve_k_base(&mut cfg, &dataset);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    checkpoint
        .check_compatible(&config_hash(&cfg, dataset.gene_names()), dataset.n_genes())
        .map_err(|e| CliError::usage(format!("refusing stale checkpoint: {e}")))?;
    let graph = build_graph(&dataset, &cfg)?;
    let imputed = impute_expression(&checkpoint.params, &dataset, &graph).map_err(CliError::runtime)?;
    let mut bundle = Bundle::create(&out_dir(g, &run))?;
    bundle.write(IMPUTED_CSV, &numeric_csv_bytes(dataset.gene_names(), &imputed)?)?;
    bundle.finish()
}
