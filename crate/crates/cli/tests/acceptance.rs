//! Acceptance criteria. Each runs in isolation and prints one PASS/FAIL line;
//! the process fails if any criterion does. A numeric argument restricts the
//! run to that criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};
use spotscape::data::{generate_synthetic, preprocess, MultiSliceDataset, SyntheticSpec, DEFAULT_HVG, DEFAULT_TARGET_SUM};
use spotscape::eval::{
    ari, clustering_accuracy, kmeans, label_transfer_ari, lr_search_by_silhouette, nmi, silhouette_batch,
    EVAL_RESTARTS, LR_GRID,
};
use spotscape::graph::{augment, build_multi_slice_graph, build_snn_graph, gcn_normalize, AugmentedView, SnnGraph};
use spotscape::losses::{
    combined_multi, combined_single, compute_prototypes, prototypical, prototypical_loss, reconstruction, reconstruction_loss, similarity_scaling,
    similarity_scaling_loss, similarity_telescope, similarity_telescope_loss, Granularity, LossParts, LossWeights, PrototypeSet,
};
use spotscape::model::{encode, init_params, ModelParams};
use spotscape::numeric::{DenseMatrix, Mode, SeededRng, SparseAdjacency, Tape};
use spotscape::pipeline::{build_graph, embed, forward_views, objective, train, TrainConfig, TrainMode};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = fn() -> Outcome;

fn main() {
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria: [(usize, &str, Criterion); 9] = [
        (1, "gradient check", c1_gradients),
        (2, "loss oracles", c2_loss_oracles),
        (3, "metric oracles", c3_metric_oracles),
        (4, "single-slice recovery", c4_single_slice),
        (5, "multi-slice integration", c5_multi_slice),
        (6, "prototype warm-up gate", c6_warmup),
        (7, "invariances", c7_invariances),
        (8, "determinism", c8_determinism),
        (9, "silhouette lr selection", c9_lr_selection),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} ({name}): {verdict} [{}; {:.1}s]",
            result.detail,
            start.elapsed().as_secs_f64()
        );
        if !result.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn normal(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Biases feeding a batch norm have an exactly zero gradient, where the
/// finite difference is pure rounding noise; the floor keeps those tensors
/// from reading as a 100% error.
const REL_FLOOR: f64 = 1e-6;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(REL_FLOOR)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cluster(z: &DenseMatrix, k: usize, seed: u64, stream: &str) -> Vec<usize> {
    let mut rng = SeededRng::new(seed, stream);
    kmeans(z, k, &mut rng, EVAL_RESTARTS).expect("kmeans").labels
}

fn synthetic(spec: SyntheticSpec) -> (MultiSliceDataset, Vec<usize>) {
    let data = generate_synthetic(&spec).expect("synthetic data");
    let ds = preprocess(&data.dataset, DEFAULT_HVG, DEFAULT_TARGET_SUM).expect("preprocess");
    (ds, data.domains)
}

fn train_embed(ds: &MultiSliceDataset, cfg: &TrainConfig) -> DenseMatrix {
    let graph = build_graph(ds, cfg).expect("graph");
    let (params, _) = train(ds, &graph, cfg).expect("training");
    embed(&params, ds, &graph).expect("embedding")
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed < Duration::from_secs(limit_secs)
}

// ------------------------------------------------------- 1: gradient check

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;

/// Evaluates a scalar function of several matrices. Returns the value and the
/// branch pattern of every piecewise operation it recorded.
type Probe<'a> = dyn Fn(&[DenseMatrix]) -> (f64, Vec<usize>) + 'a;

struct FdReport {
    worst: f64,
    checked: usize,
    skipped: usize,
}

/// Central differences over every entry of every input, compared per input
/// tensor by relative norm error. Probes that flip a ReLU sign or a top-k
/// selection are skipped.
fn fd_compare(inputs: &[DenseMatrix], analytic: &[DenseMatrix], f: &Probe) -> FdReport {
    let (_, base) = f(inputs);
    let mut report = FdReport {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for t in 0..inputs.len() {
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for idx in 0..inputs[t].len() {
            let shifted = |delta: f64| {
                let mut p = inputs.to_vec();
                p[t].as_mut_slice()[idx] += delta;
                f(&p)
            };
            let (fp, pp) = shifted(FD_STEP);
            let (fm, pm) = shifted(-FD_STEP);
            if pp != base || pm != base {
                report.skipped += 1;
                continue;
            }
            num.push((fp - fm) / (2.0 * FD_STEP));
            ana.push(analytic[t].as_slice()[idx]);
            report.checked += 1;
        }
        report.worst = report.worst.max(rel_err(&ana, &num));
    }
    report
}

/// Analytic gradients of `build` with respect to leaves holding `inputs`.
fn tape_gradients(
    inputs: &[DenseMatrix],
    build: &dyn Fn(&mut Tape, &[spotscape::numeric::Var]) -> spotscape::numeric::Var,
) -> Vec<DenseMatrix> {
    let mut tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = build(&mut tape, &leaves);
    tape.gradients_of(loss, &leaves).expect("gradients")
}

fn tape_value(
    inputs: &[DenseMatrix],
    build: &dyn Fn(&mut Tape, &[spotscape::numeric::Var]) -> spotscape::numeric::Var,
) -> (f64, Vec<usize>) {
    let mut tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
    let loss = build(&mut tape, &leaves);
    (tape.scalar(loss), tape.piecewise_pattern())
}

fn check_loss(
    name: &str,
    inputs: Vec<DenseMatrix>,
    build: &dyn Fn(&mut Tape, &[spotscape::numeric::Var]) -> spotscape::numeric::Var,
) -> (String, FdReport) {
    let analytic = tape_gradients(&inputs, build);
    let report = fd_compare(&inputs, &analytic, &|p| tape_value(p, build));
    (name.to_string(), report)
}

struct ModelFixture {
    params: ModelParams,
    features: DenseMatrix,
    membership: Vec<usize>,
    views: [AugmentedView; 2],
}

fn model_fixture(seed: u64) -> ModelFixture {
    let spec = SyntheticSpec {
        spots_per_slice: 6,
        genes: 8,
        domains: 2,
        slices: 2,
        batch_shift: 0.3,
        marker_genes_per_domain: 2,
        seed,
        ..SyntheticSpec::default()
    };
    let (ds, _) = synthetic(spec);
    let cfg = TrainConfig {
        hidden_dim: 16,
        embedding_dim: 16,
        snn_k: 3,
        seed,
        ..TrainConfig::default()
    };
    let graph = build_multi_slice_graph(&ds, cfg.snn_k).expect("graph");
    let features = ds.expression();
    let (params, _) = init_params(&cfg.model_config(ds.n_genes()), seed).expect("init");
    let aug = SeededRng::new(seed, "augment/0");
    let view = |label: &str| augment(&graph, &features, &cfg.augment, &mut aug.derive(label)).expect("augment");
    ModelFixture {
        params,
        membership: ds.membership(),
        views: [view("view1"), view("view2")],
        features,
    }
}

fn with_tensors(base: &ModelParams, tensors: &[DenseMatrix]) -> ModelParams {
    let mut p = base.clone();
    for (dst, src) in p.tensors_mut().into_iter().zip(tensors) {
        *dst = src.clone();
    }
    p
}

/// Value, branch pattern and (optionally) parameter gradients of the training
/// objective on fixed views.
fn model_objective(
    fx: &ModelFixture,
    params: &ModelParams,
    mode: TrainMode,
    prototypes: Option<&PrototypeSet>,
    want_grads: bool,
) -> spotscape::Result<(f64, Vec<usize>, Vec<DenseMatrix>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let target = tape.constant(fx.features.clone());
    let fwd = forward_views(&mut tape, params, &vars, [&fx.views[0], &fx.views[1]])?;
    let weights = LossWeights::default();
    let (total, _) = objective(&mut tape, &fwd, target, &fx.membership, mode, &weights, prototypes)?;
    let grads = if want_grads {
        tape.gradients_of(total, &vars.0)?
    } else {
        Vec::new()
    };
    Ok((tape.scalar(total), tape.piecewise_pattern(), grads))
}

fn check_model(name: &str, fx: &ModelFixture, mode: TrainMode, prototypes: Option<&PrototypeSet>) -> (String, FdReport) {
    let (_, _, analytic) = model_objective(fx, &fx.params, mode, prototypes, true).expect("objective");
    let inputs: Vec<DenseMatrix> = fx.params.tensors().into_iter().cloned().collect();
    let report = fd_compare(&inputs, &analytic, &|p| {
        let (v, pat, _) = model_objective(fx, &with_tensors(&fx.params, p), mode, prototypes, false).expect("objective");
        (v, pat)
    });
    (name.to_string(), report)
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(11, "acceptance/gradients");
    let (n, d, g) = (12, 8, 8);
    let z1 = normal(n, d, &mut rng);
    let z2 = normal(n, d, &mut rng);
    let x = normal(n, g, &mut rng);
    let x1 = normal(n, g, &mut rng);
    let x2 = normal(n, g, &mut rng);
    let other = normal(n, d, &mut rng);
    let membership: Vec<usize> = (0..n).map(|i| i / 6).collect();
    let protos = compute_prototypes(&other, 2, &[1.0, 1.5, 2.0], &SeededRng::new(11, "acceptance/prototypes"))
        .expect("prototypes");

    let mut results = vec![
        check_loss("sc", vec![z1.clone(), z2.clone()], &|t, v| similarity_telescope(t, v[0], v[1]).unwrap().0),
        check_loss("recon", vec![x1, x2], &|t, v| {
            let target = t.constant(x.clone());
            reconstruction(t, target, v[0], v[1]).unwrap()
        }),
        check_loss("pcl", vec![z1.clone()], &|t, v| prototypical(t, v[0], &protos, 0.75).unwrap()),
        check_loss("ss", vec![z1, z2], &|t, v| {
            let (_, h) = similarity_telescope(t, v[0], v[1]).unwrap();
            similarity_scaling(t, h, &membership, 5, true).unwrap()
        }),
    ];

    // The first seed whose small fixture trains without a degenerate row.
    let fx = (0..20)
        .map(model_fixture)
        .find(|fx| model_objective(fx, &fx.params, TrainMode::Multi, None, false).is_ok())
        .expect("a usable fixture");
    let z2_value = {
        let mut tape = Tape::new();
        let vars = fx.params.register(&mut tape);
        let fwd = forward_views(&mut tape, &fx.params, &vars, [&fx.views[0], &fx.views[1]]).expect("forward");
        tape.value(fwd.embeddings[1]).clone()
    };
    let fx_protos = compute_prototypes(&z2_value, 2, &[1.0, 1.5, 2.0], &SeededRng::new(0, "prototypes/500"))
        .expect("prototypes");
    results.push(check_model("single objective", &fx, TrainMode::Single, None));
    results.push(check_model("multi objective", &fx, TrainMode::Multi, Some(&fx_protos)));

    let elapsed = start.elapsed();
    let mut pass = within(elapsed, 30);
    let mut parts = Vec::new();
    for (name, r) in &results {
        let total = r.checked + r.skipped;
        // Kink skips must stay rare or the check says nothing.
        let ok = r.worst < FD_TOL && r.checked > 0 && r.skipped * 20 <= total;
        pass &= ok;
        parts.push(format!("{name} rel {:.1e} ({} skipped of {total})", r.worst, r.skipped));
    }
    outcome(pass, parts.join(", "))
}

// --------------------------------------------------------- 2: loss oracles

fn c2_loss_oracles() -> Outcome {
    let mut fails = Vec::new();
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() > tol || !got.is_finite() {
            fails.push(format!("{name}: got {got}, want {want}"));
        }
    };

    let z1 = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
    let z2 = DenseMatrix::from_rows(&[[1.0, 0.0], [0.6, 0.8]]);
    let (sc, _) = similarity_telescope_loss(&z1, &z2).unwrap();
    check("sc", sc, 0.18, 1e-9);
    let (sc_same, _) = similarity_telescope_loss(&z1, &z1).unwrap();
    check("sc identical views", sc_same, 0.0, 0.0);

    let x = DenseMatrix::from_rows(&[[1.0, 2.0]]);
    let x1 = DenseMatrix::from_rows(&[[1.0, 2.0]]);
    let x2 = DenseMatrix::from_rows(&[[0.0, 2.0]]);
    check("recon", reconstruction_loss(&x, &x1, &x2).unwrap(), 0.5, 1e-9);
    check("recon exact", reconstruction_loss(&x, &x, &x).unwrap(), 0.0, 0.0);

    // Cosines 1 and 0 at tau 1: -log softmax = ln(1 + e^-1).
    let z = DenseMatrix::from_rows(&[[1.0, 0.0]]);
    let two = PrototypeSet {
        granularities: vec![Granularity {
            centroids: DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            assignments: vec![0],
        }],
    };
    let pcl = prototypical_loss(&z, &two, 1.0).unwrap();
    check("pcl", pcl, (1.0 + (-1.0f64).exp()).ln(), 1e-9);
    check("pcl 4-digit", (pcl * 1e4).round() / 1e4, 0.3133, 1e-12);
    let one = PrototypeSet {
        granularities: vec![Granularity {
            centroids: DenseMatrix::from_rows(&[[0.6, 0.8]]),
            assignments: vec![0, 0],
        }],
    };
    let zz = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
    check("pcl single prototype", prototypical_loss(&zz, &one, 0.75).unwrap(), 0.0, 0.0);

    // Two slices of two spots, top-1: only spot 0 has a gap (0.9 vs 0.7), and
    // the loss averages over N (N_d - 1) = 4 terms.
    let h = DenseMatrix::from_rows(&[
        [0.9, 0.5, 0.7, 0.2],
        [0.5, 0.5, 0.5, 0.5],
        [0.3, 0.3, 0.3, 0.3],
        [0.1, 0.1, 0.1, 0.1],
    ]);
    let membership = [0, 0, 1, 1];
    let ss = similarity_scaling_loss(&h, &membership, 1, true).unwrap();
    check("ss pair contribution", ss * 4.0, 0.04, 1e-9);
    let flat = DenseMatrix::filled(4, 4, 0.5);
    check("ss equal slices", similarity_scaling_loss(&flat, &membership, 2, true).unwrap(), 0.0, 0.0);

    let w = LossWeights::default();
    let single = LossParts {
        sc: 0.18,
        recon: 0.5,
        ..LossParts::default()
    };
    check("combined single", combined_single(&single, &w), 0.23, 1e-9);
    let parts = LossParts {
        sc: 0.1,
        recon: 0.2,
        pcl: 0.3,
        ss: 0.4,
    };
    check("combined multi", combined_multi(&parts, &w, 500), 0.523, 1e-9);
    check("combined multi warm-up", combined_multi(&parts, &w, 499), 0.52, 1e-9);

    if fails.is_empty() {
        outcome(true, "all oracle values within 1e-9, zero cases exact")
    } else {
        outcome(false, fails.join("; "))
    }
}

// ------------------------------------------------------- 3: metric oracles

/// All set partitions of `n` elements into at most `max_blocks` blocks, as
/// restricted growth strings.
fn partitions(n: usize, max_blocks: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, max: usize, blocks: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..(blocks + 1).min(max) {
            cur.push(b);
            rec(n, max, blocks.max(b + 1), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, max_blocks, 0, &mut Vec::new(), &mut out);
    out
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_ca(truth: &[usize], pred: &[usize]) -> f64 {
    let m = truth.iter().chain(pred).max().map_or(0, |v| v + 1);
    let best = permutations(m)
        .iter()
        .map(|sigma| truth.iter().zip(pred).filter(|(t, p)| sigma[**p] == **t).count())
        .max()
        .unwrap_or(0);
    best as f64 / truth.len() as f64
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

fn direct_nmi(truth: &[usize], pred: &[usize]) -> f64 {
    let n = truth.len() as f64;
    let kt = truth.iter().max().unwrap() + 1;
    let kp = pred.iter().max().unwrap() + 1;
    let mut joint = vec![vec![0usize; kp]; kt];
    for (&t, &p) in truth.iter().zip(pred) {
        joint[t][p] += 1;
    }
    let rows: Vec<usize> = joint.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..kp).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for i in 0..kt {
        for j in 0..kp {
            let c = joint[i][j];
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * (pij / ((rows[i] as f64 / n) * (cols[j] as f64 / n))).ln();
            }
        }
    }
    let (ht, hp) = (entropy(&rows, n), entropy(&cols, n));
    if ht == 0.0 && hp == 0.0 {
        1.0
    } else {
        mi / ((ht + hp) / 2.0)
    }
}

fn c3_metric_oracles() -> Outcome {
    let mut fails = Vec::new();
    let a = ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
    if (a + 0.5).abs() > 1e-12 {
        fails.push(format!("ari fixture {a}"));
    }

    let mut pairs = 0usize;
    let mut worst_ca: f64 = 0.0;
    let mut worst_nmi: f64 = 0.0;
    for n in 1..=6 {
        let parts = partitions(n, 4);
        for t in &parts {
            for p in &parts {
                pairs += 1;
                let ca = clustering_accuracy(t, p).unwrap();
                worst_ca = worst_ca.max((ca - brute_force_ca(t, p)).abs());
                if n == 6 {
                    let v = nmi(t, p).unwrap();
                    worst_nmi = worst_nmi.max((v - direct_nmi(t, p)).abs());
                }
            }
        }
    }
    if worst_ca > 1e-12 {
        fails.push(format!("ca deviates from brute force by {worst_ca:e}"));
    }
    if worst_nmi > 1e-12 {
        fails.push(format!("nmi deviates from direct sum by {worst_nmi:e}"));
    }

    let mut rng = SeededRng::new(3, "acceptance/ltari");
    let z = normal(40, 5, &mut rng);
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let lt = label_transfer_ari(&z, &labels, &z, &labels).unwrap();
    if lt != 1.0 {
        fails.push(format!("self ltari {lt}"));
    }

    if fails.is_empty() {
        outcome(
            true,
            format!("ari -0.5, {pairs} partition pairs: ca err {worst_ca:.0e}, nmi err {worst_nmi:.0e}, ltari 1"),
        )
    } else {
        outcome(false, fails.join("; "))
    }
}

// ------------------------------------------------ 4: single-slice recovery

const C4_EPOCHS: usize = 300;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn c4_single_slice() -> Outcome {
    let start = Instant::now();
    let scores: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let (ds, domains) = synthetic(SyntheticSpec {
                seed,
                ..SyntheticSpec::default()
            });
            let cfg = TrainConfig {
                epochs: C4_EPOCHS,
                seed,
                ..TrainConfig::default()
            };
            let z = train_embed(&ds, &cfg);
            ari(&domains, &cluster(&z, 3, seed, "evaluate/kmeans")).unwrap()
        })
        .collect();
    let m = mean(&scores);
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = m >= 0.90 && lo >= 0.80 && within(start.elapsed(), 600);
    outcome(
        pass,
        format!("{C4_EPOCHS} epochs, ARI per seed {scores:.3?}, mean {m:.3}, min {lo:.3}"),
    )
}

// ---------------------------------------------- 5: multi-slice integration

const C5_SPOTS: usize = 300;
const C5_EPOCHS: usize = 300;
const C5_WARMUP: usize = 150;

fn c5_multi_slice() -> Outcome {
    let start = Instant::now();
    let mut gains = Vec::new();
    let mut sb = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let (ds, domains) = synthetic(SyntheticSpec {
            spots_per_slice: C5_SPOTS,
            slices: 2,
            batch_shift: 0.5,
            seed,
            ..SyntheticSpec::default()
        });
        let membership = ds.membership();
        let run = |lambda_ss: f64| {
            let cfg = TrainConfig {
                mode: TrainMode::Multi,
                epochs: C5_EPOCHS,
                seed,
                k_base: Some(3),
                loss: LossWeights {
                    lambda_ss,
                    warmup_epochs: C5_WARMUP,
                    ..LossWeights::default()
                },
                ..TrainConfig::default()
            };
            let z = train_embed(&ds, &cfg);
            let a = ari(&domains, &cluster(&z, 3, seed, "evaluate/kmeans")).unwrap();
            let b = silhouette_batch(&z, &domains, &membership).unwrap().score;
            (a, b)
        };
        let (a_full, b_full) = run(1.0);
        let (a_abl, b_abl) = run(0.0);
        gains.push(a_full - a_abl);
        sb.0.push(b_full);
        sb.1.push(b_abl);
    }
    let gain = mean(&gains);
    let (b_full, b_abl) = (mean(&sb.0), mean(&sb.1));
    let pass = gain >= 0.05 && b_full > b_abl && within(start.elapsed(), 1200);
    outcome(
        pass,
        format!(
            "2x{C5_SPOTS} spots, {C5_EPOCHS} epochs: ARI gain {gain:.3} (per seed {gains:.3?}), \
             silhouette_batch {b_full:.3} vs {b_abl:.3}"
        ),
    )
}

// ------------------------------------------------- 6: prototype warm-up gate

fn c6_warmup() -> Outcome {
    let (ds, _) = synthetic(SyntheticSpec {
        spots_per_slice: 40,
        genes: 50,
        domains: 2,
        slices: 2,
        batch_shift: 0.5,
        marker_genes_per_domain: 5,
        seed: 5,
        ..SyntheticSpec::default()
    });
    let cfg = TrainConfig {
        mode: TrainMode::Multi,
        epochs: 510,
        k_base: Some(2),
        seed: 5,
        ..TrainConfig::default()
    };
    let graph = build_graph(&ds, &cfg).unwrap();
    let (_, report) = train(&ds, &graph, &cfg).unwrap();
    let warm = cfg.loss.warmup_epochs;
    let early_zero = report.epochs.iter().filter(|r| r.epoch < warm).all(|r| r.parts.pcl == 0.0);
    let late = report.epochs.iter().find(|r| r.epoch >= warm && r.parts.pcl != 0.0);
    let pass = early_zero && late.is_some() && report.epochs.len() == 510;
    outcome(
        pass,
        format!(
            "pcl zero before epoch {warm}: {early_zero}, first nonzero {:?}",
            late.map(|r| (r.epoch, r.parts.pcl))
        ),
    )
}

// ----------------------------------------------------------- 7: invariances

fn orthogonal(d: usize, rng: &mut SeededRng) -> DenseMatrix {
    let a = normal(d, d, rng);
    let mut q: Vec<Vec<f64>> = Vec::new();
    for c in 0..d {
        let mut v = a.column(c);
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
        }
        let n = norm(&v);
        q.push(v.into_iter().map(|x| x / n).collect());
    }
    DenseMatrix::from_fn(d, d, |r, c| q[c][r])
}

fn permuted_graph(graph: &SnnGraph, perm: &[usize]) -> SparseAdjacency {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let edges = graph.adjacency().edges().map(|(s, t, w)| (inv[s], inv[t], w)).collect();
    SparseAdjacency::from_edges(perm.len(), edges, true).unwrap()
}

fn c7_invariances() -> Outcome {
    let mut rng = SeededRng::new(17, "acceptance/invariance");
    let mut notes = Vec::new();
    let mut pass = true;

    let z1 = normal(12, 8, &mut rng);
    let z2 = normal(12, 8, &mut rng);
    let q = orthogonal(8, &mut rng);
    let (base, h) = similarity_telescope_loss(&z1, &z2).unwrap();
    let (rot, _) = similarity_telescope_loss(&z1.matmul(&q).unwrap(), &z2.matmul(&q).unwrap()).unwrap();
    let d_sc = (base - rot).abs();
    pass &= d_sc <= 1e-9;
    notes.push(format!("sc rotation {d_sc:.0e}"));

    let membership: Vec<usize> = (0..12).map(|i| i / 6).collect();
    let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2, 10, 7, 6, 11, 9, 8];
    let ss = similarity_scaling_loss(&h, &membership, 3, true).unwrap();
    let (_, hp) = similarity_telescope_loss(&z1.select_rows(&perm), &z2.select_rows(&perm)).unwrap();
    let ss_p = similarity_scaling_loss(&hp, &membership, 3, true).unwrap();
    let d_ss = (ss - ss_p).abs();
    pass &= d_ss <= 1e-12;
    notes.push(format!("ss permutation {d_ss:.0e}"));

    let coords = DenseMatrix::from_fn(12, 2, |r, c| if c == 0 { (r % 4) as f64 } else { (r / 4) as f64 });
    let graph = build_snn_graph(&coords, 3).unwrap();
    let x = normal(12, 8, &mut rng).map(f64::abs);
    let cfg = TrainConfig {
        hidden_dim: 16,
        embedding_dim: 8,
        ..TrainConfig::default()
    };
    let (params, _) = init_params(&cfg.model_config(8), 2).unwrap();
    let run = |features: DenseMatrix, op: SparseAdjacency| {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let f = tape.constant(features);
        let out = encode(&mut tape, &params, &vars, f, &std::sync::Arc::new(op), Mode::Train).unwrap();
        tape.value(out.output).clone()
    };
    let full_perm: Vec<usize> = vec![7, 2, 11, 0, 5, 9, 1, 4, 10, 3, 8, 6];
    let out = run(x.clone(), gcn_normalize(graph.adjacency()));
    let out_p = run(x.select_rows(&full_perm), gcn_normalize(&permuted_graph(&graph, &full_perm)));
    let d_enc = out.select_rows(&full_perm).max_abs_diff(&out_p);
    pass &= d_enc <= 1e-10;
    notes.push(format!("encode equivariance {d_enc:.0e}"));

    let truth: Vec<usize> = (0..50).map(|i| (i * 7 + i / 9) % 4).collect();
    let pred: Vec<usize> = (0..50).map(|i| (i * 3 + i / 5) % 3).collect();
    let rename_t: Vec<String> = truth.iter().map(|t| format!("domain-{}", (t * 3 + 1) % 4)).collect();
    let rename_p: Vec<usize> = pred.iter().map(|p| (p + 2) % 3 + 10).collect();
    let same = ari(&truth, &pred).unwrap() == ari(&rename_t, &rename_p).unwrap()
        && nmi(&truth, &pred).unwrap() == nmi(&rename_t, &rename_p).unwrap()
        && clustering_accuracy(&truth, &pred).unwrap() == clustering_accuracy(&rename_t, &rename_p).unwrap();
    pass &= same;
    notes.push(format!("label renaming exact: {same}"));

    outcome(pass, notes.join(", "))
}

// ----------------------------------------------------------- 8: determinism

fn spotscape(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_spotscape"))
        .args(args)
        .env("RUST_LOG", "error")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "epochs = 40\nhidden_dim = 64\nembedding_dim = 32\n").unwrap();
    if !spotscape(&["synth", "--spots", "150", "--genes", "60", "--seed", "3", "--out", p(&data)]) {
        return outcome(false, "synth failed");
    }
    let slice = data.join("slice_0");
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let ok = spotscape(&["train", p(&slice), "--config", p(&config), "--seed", "3", "--out", p(&out)]);
            (ok, out)
        })
        .collect();
    if runs.iter().any(|(ok, _)| !ok) {
        return outcome(false, "train failed");
    }
    let mut differing = Vec::new();
    for file in ["embeddings.csv", "report.json", "metrics.json"] {
        let a = std::fs::read(runs[0].1.join(file));
        let b = std::fs::read(runs[1].1.join(file));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => differing.push(file),
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            "embeddings.csv, report.json, metrics.json byte-identical".to_string()
        } else {
            format!("differing: {differing:?}")
        },
    )
}

// ------------------------------------------------- 9: silhouette lr selection

const C9_EPOCHS: usize = 150;

fn c9_lr_selection() -> Outcome {
    let (ds, domains) = synthetic(SyntheticSpec::default());
    let cfg = TrainConfig {
        epochs: C9_EPOCHS,
        k_base: Some(3),
        ..TrainConfig::default()
    };
    let graph = build_graph(&ds, &cfg).unwrap();
    let search = lr_search_by_silhouette(&ds, &graph, &cfg, &LR_GRID).unwrap();
    let aris: Vec<f64> = LR_GRID
        .iter()
        .map(|&lr| {
            let z = train_embed(
                &ds,
                &TrainConfig {
                    learning_rate: lr,
                    ..cfg.clone()
                },
            );
            ari(&domains, &cluster(&z, 3, cfg.seed, "lr_search/kmeans")).unwrap()
        })
        .collect();
    let best = aris.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let chosen = LR_GRID.iter().position(|&lr| lr == search.best_learning_rate).unwrap();
    let gap = best - aris[chosen];
    outcome(
        gap <= 0.05,
        format!(
            "{C9_EPOCHS} epochs, selected lr {:e} with ARI {:.3}, grid ARI {aris:.3?}, gap {gap:.3}",
            search.best_learning_rate, aris[chosen]
        ),
    )
}
