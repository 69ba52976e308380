//! Siamese GCN encoder, MLP decoder, and their parameters.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SnnGraph;
use crate::numeric::{AdamState, BatchStats, DenseMatrix, Mode, RunningStats, SeededRng, SparseAdjacency, Tape, Var};

pub const DEFAULT_HIDDEN_DIM: usize = 256;
pub const DEFAULT_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    #[default]
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_genes: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub final_activation: FinalActivation,
}

impl ModelConfig {
    pub fn new(n_genes: usize) -> Self {
        Self {
            n_genes,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            final_activation: FinalActivation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_genes == 0 || self.hidden_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::param(format!(
                "model dimensions must be positive, got [{}, {}, {}]",
                self.n_genes, self.hidden_dim, self.embedding_dim
            )));
        }
        Ok(())
    }
}

/// `x W + b` with `W` stored `fan_in x fan_out` and `b` as a `1 x fan_out` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

impl Linear {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound)),
            bias: DenseMatrix::zeros(1, fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: DenseMatrix,
    pub beta: DenseMatrix,
    pub running: RunningStats,
}

impl BatchNormParams {
    fn new(cols: usize) -> Self {
        Self {
            gamma: DenseMatrix::filled(1, cols, 1.0),
            beta: DenseMatrix::zeros(1, cols),
            running: RunningStats::new(cols),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub linear: Linear,
    pub norm: BatchNormParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<GcnLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub hidden: Linear,
    pub norm: BatchNormParams,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

/// Number of trainable tensors; the order is fixed by [`ModelParams::tensors`].
pub const TENSOR_COUNT: usize = 14;

impl ModelParams {
    /// Trainable tensors: per encoder layer `W, b, gamma, beta`, then the
    /// decoder hidden `W, b, gamma, beta` and output `W, b`.
    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out = Vec::with_capacity(TENSOR_COUNT);
        for l in &self.encoder.layers {
            out.extend([&l.linear.weight, &l.linear.bias, &l.norm.gamma, &l.norm.beta]);
        }
        let d = &self.decoder;
        out.extend([&d.hidden.weight, &d.hidden.bias, &d.norm.gamma, &d.norm.beta]);
        out.extend([&d.output.weight, &d.output.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = Vec::with_capacity(TENSOR_COUNT);
        for l in &mut self.encoder.layers {
            out.extend([&mut l.linear.weight, &mut l.linear.bias, &mut l.norm.gamma, &mut l.norm.beta]);
        }
        let d = &mut self.decoder;
        out.extend([&mut d.hidden.weight, &mut d.hidden.bias, &mut d.norm.gamma, &mut d.norm.beta]);
        out.extend([&mut d.output.weight, &mut d.output.bias]);
        out
    }

    /// Batch-norm layers in forward order: encoder layers then decoder hidden.
    pub fn norms(&self) -> Vec<&BatchNormParams> {
        let mut out: Vec<&BatchNormParams> = self.encoder.layers.iter().map(|l| &l.norm).collect();
        out.push(&self.decoder.norm);
        out
    }

    pub fn norms_mut(&mut self) -> Vec<&mut BatchNormParams> {
        let mut out: Vec<&mut BatchNormParams> = self.encoder.layers.iter_mut().map(|l| &mut l.norm).collect();
        out.push(&mut self.decoder.norm);
        out
    }

    /// Records every trainable tensor as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(self.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect())
    }

    /// Records every trainable tensor as a constant (inference).
    pub fn register_frozen(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(self.tensors().into_iter().map(|t| tape.constant(t.clone())).collect())
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (i, t) in self.tensors().into_iter().enumerate() {
            t.validate_finite(&format!("parameter tensor {i}"))?;
        }
        Ok(())
    }
}

/// Tape handles of the trainable tensors, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<Var>);

impl ParamVars {
    fn encoder_layer(&self, l: usize) -> [Var; 4] {
        let o = 4 * l;
        [self.0[o], self.0[o + 1], self.0[o + 2], self.0[o + 3]]
    }

    fn decoder(&self) -> [Var; 6] {
        let o = 8;
        std::array::from_fn(|i| self.0[o + i])
    }
}

/// Glorot-uniform weights, zero biases, unit batch-norm scale, zero shift.
/// Also returns zeroed Adam buffers mirroring the parameter shapes.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<(ModelParams, AdamState)> {
    config.validate()?;
    let mut rng = SeededRng::new(seed, "init");
    let dims = [config.n_genes, config.hidden_dim, config.embedding_dim];
    let layers = dims
        .windows(2)
        .map(|w| GcnLayer {
            linear: Linear::glorot(w[0], w[1], &mut rng),
            norm: BatchNormParams::new(w[1]),
        })
        .collect();
    let decoder = DecoderParams {
        hidden: Linear::glorot(config.embedding_dim, config.hidden_dim, &mut rng),
        norm: BatchNormParams::new(config.hidden_dim),
        output: Linear::glorot(config.hidden_dim, config.n_genes, &mut rng),
    };
    let params = ModelParams {
        config: config.clone(),
        encoder: EncoderParams { layers },
        decoder,
    };
    let adam = AdamState::for_shapes(params.tensors().into_iter().map(DenseMatrix::shape));
    Ok((params, adam))
}

/// Output of a recorded forward pass. In train mode `stats` holds the batch
/// statistics of each batch-norm layer, for folding into the running stats.
pub struct Forward {
    pub output: Var,
    pub stats: Vec<BatchStats>,
}

fn norm_layer(
    tape: &mut Tape,
    h: Var,
    gamma: Var,
    beta: Var,
    running: &RunningStats,
    mode: Mode,
    stats: &mut Vec<BatchStats>,
) -> Result<Var> {
    match mode {
        Mode::Train => {
            let (y, s) = tape.batch_norm_train(h, gamma, beta)?;
            stats.push(s);
            Ok(y)
        }
        Mode::Eval => tape.batch_norm_eval(h, gamma, beta, running),
    }
}

/// Per layer `A H W + b`, batch norm, ReLU. The last ReLU follows
/// `final_activation`.
pub fn encode(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    features: Var,
    operator: &Arc<SparseAdjacency>,
    mode: Mode,
) -> Result<Forward> {
    let x = tape.value(features);
    if x.cols() != params.config.n_genes || x.rows() != operator.node_count() {
        return Err(Error::Shape {
            op: "encode",
            left: x.shape(),
            right: (operator.node_count(), params.config.n_genes),
        });
    }
    let mut stats = Vec::new();
    let mut h = features;
    let n_layers = params.encoder.layers.len();
    for (l, layer) in params.encoder.layers.iter().enumerate() {
        let [w, b, gamma, beta] = vars.encoder_layer(l);
        let propagated = tape.sparse_matmul(operator, h)?;
        let lin = tape.matmul(propagated, w)?;
        let lin = tape.add_row_broadcast(lin, b)?;
        let normed = norm_layer(tape, lin, gamma, beta, &layer.norm.running, mode, &mut stats)?;
        h = if l + 1 < n_layers || params.config.final_activation == FinalActivation::Relu {
            tape.relu(normed)?
        } else {
            normed
        };
    }
    Ok(Forward { output: h, stats })
}

/// Linear, batch norm, ReLU, linear.
pub fn decode(tape: &mut Tape, params: &ModelParams, vars: &ParamVars, embeddings: Var, mode: Mode) -> Result<Forward> {
    let z = tape.value(embeddings);
    if z.cols() != params.config.embedding_dim {
        return Err(Error::Shape {
            op: "decode",
            left: z.shape(),
            right: (z.rows(), params.config.embedding_dim),
        });
    }
    let [w1, b1, gamma, beta, w2, b2] = vars.decoder();
    let mut stats = Vec::new();
    let h = tape.matmul(embeddings, w1)?;
    let h = tape.add_row_broadcast(h, b1)?;
    let h = norm_layer(tape, h, gamma, beta, &params.decoder.norm.running, mode, &mut stats)?;
    let h = tape.relu(h)?;
    let out = tape.matmul(h, w2)?;
    let out = tape.add_row_broadcast(out, b2)?;
    Ok(Forward { output: out, stats })
}

/// Eval-mode encoding of the unaugmented features on the full graph.
pub fn infer_embeddings(params: &ModelParams, features: &DenseMatrix, graph: &SnnGraph) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let x = tape.constant(features.clone());
    let fwd = encode(&mut tape, params, &vars, x, graph.normalized(), Mode::Eval)?;
    Ok(tape.value(fwd.output).clone())
}

/// Eval-mode decoding of embeddings.
pub fn decode_embeddings(params: &ModelParams, embeddings: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let z = tape.constant(embeddings.clone());
    let fwd = decode(&mut tape, params, &vars, z, Mode::Eval)?;
    Ok(tape.value(fwd.output).clone())
}
