//! Eager reverse-mode differentiation over dense matrices.
//!
//! Every operation evaluates immediately and appends a node recording its
//! parents and whatever the backward rule needs. [`Tape::backward`] replays
//! the nodes in reverse order. Nodes derived only from constants are never
//! visited, so constant branches cost nothing on the way back.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::dense::{gemm, top_k_indices, DenseMatrix, NORM_EPS};
use super::norm::{check_affine, BatchStats, RunningStats, BN_EPS};
use super::sparse::SparseAdjacency;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    SparseMatMul(Arc<SparseAdjacency>, usize),
    AddRowBroadcast(usize, usize),
    SubColBroadcast(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Transpose(usize),
    Square(usize),
    Relu(usize),
    SumRows(usize),
    Sum(usize),
    Mean(usize),
    RowL2Normalize {
        input: usize,
        norms: Vec<f64>,
    },
    BatchNormTrain {
        input: usize,
        gamma: usize,
        beta: usize,
        normalized: DenseMatrix,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        input: usize,
        gamma: usize,
        beta: usize,
        normalized: DenseMatrix,
        inv_std: Vec<f64>,
    },
    GroupTopKMean {
        input: usize,
        groups: usize,
        k: usize,
        /// Selected column indices, `k` per (row, group), row-major.
        selected: Vec<usize>,
    },
    LogSoftmaxGather {
        input: usize,
        targets: Vec<usize>,
        softmax: DenseMatrix,
    },
}

struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    adjoints: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `var`; zero when `var` does not influence the loss.
    pub fn get(&self, var: Var) -> Result<DenseMatrix> {
        if var.tape != self.tape || var.index >= self.adjoints.len() {
            return Err(Error::Tape("variable does not belong to this tape".into()));
        }
        Ok(match &self.adjoints[var.index] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.index];
                DenseMatrix::zeros(r, c)
            }
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Branch taken by every piecewise op: one entry per ReLU input (1 when
    /// positive) followed by every top-k selection. Two recordings of the same
    /// graph lie on one smooth piece iff their patterns are equal.
    pub fn piecewise_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.nodes[*a].value.as_slice().iter().map(|&v| usize::from(v > 0.0))),
                Op::GroupTopKMean { selected, .. } => out.extend_from_slice(selected),
                _ => {}
            }
        }
        out
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape("variable does not belong to this tape".into()));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        assert_eq!(v.tape, self.id, "variable does not belong to this tape");
        &self.nodes[v.index].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn shape_err(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
        Error::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::MatMul(ia, ib), rg))
    }

    pub fn sparse_matmul(&mut self, a: &Arc<SparseAdjacency>, b: Var) -> Result<Var> {
        let ib = self.idx(b)?;
        let value = a.matmul_dense(&self.nodes[ib].value)?;
        let rg = self.rg(ib);
        Ok(self.push(value, Op::SparseMatMul(Arc::clone(a), ib), rg))
    }

    /// `a + 1 * b` where `b` is a single row.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if bv.shape() != (1, av.cols()) {
            return Err(Self::shape_err("add_row_broadcast", av, bv));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *x += y;
            }
        }
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::AddRowBroadcast(ia, ib), rg))
    }

    /// `a - b * 1^T` where `b` is a single column.
    pub fn sub_col_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if bv.shape() != (av.rows(), 1) {
            return Err(Self::shape_err("sub_col_broadcast", av, bv));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let s = bv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|x| *x -= s);
        }
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::SubColBroadcast(ia, ib), rg))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if av.shape() != bv.shape() {
            return Err(Self::shape_err(name, av, bv));
        }
        let values = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = DenseMatrix::new(av.rows(), av.cols(), values)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, op(ia, ib), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.scale(alpha);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Scale(ia, alpha), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.transpose();
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Transpose(ia), rg))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|x| x * x);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Square(ia), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|x| x.max(0.0));
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Relu(ia), rg))
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = &self.nodes[ia].value;
        let value = DenseMatrix::new(av.rows(), 1, av.row_sums())?;
        let rg = self.rg(ia);
        Ok(self.push(value, Op::SumRows(ia), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = DenseMatrix::scalar(self.nodes[ia].value.sum());
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Sum(ia), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = &self.nodes[ia].value;
        if av.is_empty() {
            return Err(Error::param("mean of an empty matrix"));
        }
        let value = DenseMatrix::scalar(av.mean());
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Mean(ia), rg))
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = &self.nodes[ia].value;
        let mut value = av.clone();
        let mut norms = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm >= NORM_EPS) {
                return Err(Error::DegenerateRow { row: r, eps: NORM_EPS });
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let rg = self.rg(ia);
        Ok(self.push(value, Op::RowL2Normalize { input: ia, norms }, rg))
    }

    /// Batch norm with batch statistics. Returns the output and the batch
    /// statistics so the caller can fold them into its running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let xv = &self.nodes[ix].value;
        check_affine(xv, &self.nodes[ig].value, &self.nodes[ib].value)?;
        if xv.rows() == 0 {
            return Err(Error::param("batch norm over an empty batch"));
        }
        let stats = BatchStats::of(xv);
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let normalized = standardize(xv, &stats.mean, &inv_std);
        let value = affine_rows(&normalized, &self.nodes[ig].value, &self.nodes[ib].value);
        let rg = self.rg(ix) || self.rg(ig) || self.rg(ib);
        let out = self.push(
            value,
            Op::BatchNormTrain {
                input: ix,
                gamma: ig,
                beta: ib,
                normalized,
                inv_std,
            },
            rg,
        );
        Ok((out, stats))
    }

    /// Batch norm with fixed running statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, running: &RunningStats) -> Result<Var> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let xv = &self.nodes[ix].value;
        check_affine(xv, &self.nodes[ig].value, &self.nodes[ib].value)?;
        if !running.populated || running.mean.len() != xv.cols() {
            return Err(Error::State(
                "batch norm eval mode requires populated running statistics".into(),
            ));
        }
        let inv_std: Vec<f64> = running.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let normalized = standardize(xv, &running.mean, &inv_std);
        let value = affine_rows(&normalized, &self.nodes[ig].value, &self.nodes[ib].value);
        let rg = self.rg(ix) || self.rg(ig) || self.rg(ib);
        Ok(self.push(
            value,
            Op::BatchNormEval {
                input: ix,
                gamma: ig,
                beta: ib,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// For each row `i` and column group `g`, the mean of the `k` largest
    /// entries of row `i` among columns whose group is `g`. The selection is
    /// a constant of the forward pass; ties go to the lower column index.
    /// With `exclude_diagonal`, column `i` is never eligible for row `i`.
    pub fn group_top_k_mean(
        &mut self,
        a: Var,
        column_groups: &[usize],
        groups: usize,
        k: usize,
        exclude_diagonal: bool,
    ) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = &self.nodes[ia].value;
        if column_groups.len() != av.cols() {
            return Err(Error::Shape {
                op: "group_top_k_mean",
                left: av.shape(),
                right: (column_groups.len(), 1),
            });
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
        for (c, &g) in column_groups.iter().enumerate() {
            if g >= groups {
                return Err(Error::param(format!("column {c} has group {g} >= {groups}")));
            }
            members[g].push(c);
        }
        let mut value = DenseMatrix::zeros(av.rows(), groups);
        let mut selected = Vec::with_capacity(av.rows() * groups * k);
        let mut buf_vals = Vec::new();
        let mut buf_cols = Vec::new();
        for r in 0..av.rows() {
            let row = av.row(r);
            for (g, cols) in members.iter().enumerate() {
                buf_vals.clear();
                buf_cols.clear();
                for &c in cols {
                    if exclude_diagonal && c == r {
                        continue;
                    }
                    buf_cols.push(c);
                    buf_vals.push(row[c]);
                }
                if buf_vals.len() < k {
                    return Err(Error::param(format!(
                        "group {g} has {} eligible columns for row {r}, top-k needs {k}",
                        buf_vals.len()
                    )));
                }
                let picks = top_k_indices(&buf_vals, k)?;
                let mut total = 0.0;
                for p in picks {
                    total += buf_vals[p];
                    selected.push(buf_cols[p]);
                }
                value.set(r, g, total / k as f64);
            }
        }
        let rg = self.rg(ia);
        Ok(self.push(
            value,
            Op::GroupTopKMean {
                input: ia,
                groups,
                k,
                selected,
            },
            rg,
        ))
    }

    /// Log-softmax of each row evaluated at that row's target column (`n x 1`).
    pub fn log_softmax_gather(&mut self, a: Var, targets: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = &self.nodes[ia].value;
        if targets.len() != av.rows() {
            return Err(Error::Shape {
                op: "log_softmax_gather",
                left: av.shape(),
                right: (targets.len(), 1),
            });
        }
        let mut softmax = DenseMatrix::zeros(av.rows(), av.cols());
        let mut out = Vec::with_capacity(av.rows());
        for (r, &t) in targets.iter().enumerate() {
            if t >= av.cols() {
                return Err(Error::param(format!("target {t} out of range in row {r}")));
            }
            let row = av.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + total.ln();
            for (s, x) in softmax.row_mut(r).iter_mut().zip(row) {
                *s = (x - lse).exp();
            }
            out.push(row[t] - lse);
        }
        let value = DenseMatrix::new(av.rows(), 1, out)?;
        let rg = self.rg(ia);
        Ok(self.push(
            value,
            Op::LogSoftmaxGather {
                input: ia,
                targets: targets.to_vec(),
                softmax,
            },
            rg,
        ))
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        if self.nodes[il].value.shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut adj: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[il] = Some(DenseMatrix::scalar(1.0));
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    /// Adjoints of `leaves` with respect to `loss`.
    pub fn gradients_of(&self, loss: Var, leaves: &[Var]) -> Result<Vec<DenseMatrix>> {
        let grads = self.backward(loss)?;
        leaves.iter().map(|&v| grads.get(v)).collect()
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, adj: &mut [Option<DenseMatrix>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let mut da = DenseMatrix::zeros(val(*a).rows(), val(*a).cols());
                    gemm(1.0, g, false, val(*b), true, 0.0, &mut da);
                    accumulate(adj, *a, da);
                }
                if self.rg(*b) {
                    let mut db = DenseMatrix::zeros(val(*b).rows(), val(*b).cols());
                    gemm(1.0, val(*a), true, g, false, 0.0, &mut db);
                    accumulate(adj, *b, db);
                }
            }
            Op::SparseMatMul(s, b) => {
                if self.rg(*b) {
                    accumulate(adj, *b, s.transpose_matmul_dense(g)?);
                }
            }
            Op::AddRowBroadcast(a, b) => {
                if self.rg(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(adj, *b, DenseMatrix::new(1, g.cols(), g.column_sums())?);
                }
            }
            Op::SubColBroadcast(a, b) => {
                if self.rg(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.rg(*b) {
                    let sums = g.row_sums().into_iter().map(|s| -s).collect();
                    accumulate(adj, *b, DenseMatrix::new(g.rows(), 1, sums)?);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(adj, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(adj, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    accumulate(adj, *a, hadamard(g, val(*b)));
                }
                if self.rg(*b) {
                    accumulate(adj, *b, hadamard(g, val(*a)));
                }
            }
            Op::Scale(a, alpha) => accumulate(adj, *a, g.scale(*alpha)),
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
            Op::Square(a) => {
                let mut d = hadamard(g, val(*a));
                d.as_mut_slice().iter_mut().for_each(|x| *x *= 2.0);
                accumulate(adj, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                for (x, v) in d.as_mut_slice().iter_mut().zip(val(*a).as_slice()) {
                    if *v <= 0.0 {
                        *x = 0.0;
                    }
                }
                accumulate(adj, *a, d);
            }
            Op::SumRows(a) => {
                let av = val(*a);
                let d = DenseMatrix::from_fn(av.rows(), av.cols(), |r, _| g.get(r, 0));
                accumulate(adj, *a, d);
            }
            Op::Sum(a) => {
                let av = val(*a);
                accumulate(adj, *a, DenseMatrix::filled(av.rows(), av.cols(), g.get(0, 0)));
            }
            Op::Mean(a) => {
                let av = val(*a);
                let s = g.get(0, 0) / av.len() as f64;
                accumulate(adj, *a, DenseMatrix::filled(av.rows(), av.cols(), s));
            }
            Op::RowL2Normalize { input, norms } => {
                let y = &node.value;
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * dot) / norms[r];
                    }
                }
                accumulate(adj, *input, d);
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gam = val(*gamma);
                if self.rg(*gamma) {
                    accumulate(adj, *gamma, column_dot(g, normalized));
                }
                if self.rg(*beta) {
                    accumulate(adj, *beta, DenseMatrix::new(1, g.cols(), g.column_sums())?);
                }
                if self.rg(*input) {
                    let n = g.rows() as f64;
                    let gam = gam.as_slice();
                    // dxhat = g * gamma
                    let mut sum_dxhat = vec![0.0; g.cols()];
                    let mut sum_dxhat_xhat = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (c, (gv, xh)) in g.row(r).iter().zip(normalized.row(r)).enumerate() {
                            let dxh = gv * gam[c];
                            sum_dxhat[c] += dxh;
                            sum_dxhat_xhat[c] += dxh * xh;
                        }
                    }
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        for (c, (o, xh)) in d.row_mut(r).iter_mut().zip(normalized.row(r)).enumerate() {
                            *o = inv_std[c] / n * (n * *o * gam[c] - sum_dxhat[c] - xh * sum_dxhat_xhat[c]);
                        }
                    }
                    accumulate(adj, *input, d);
                }
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gam = val(*gamma);
                if self.rg(*gamma) {
                    accumulate(adj, *gamma, column_dot(g, normalized));
                }
                if self.rg(*beta) {
                    accumulate(adj, *beta, DenseMatrix::new(1, g.cols(), g.column_sums())?);
                }
                if self.rg(*input) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        for ((o, gm), s) in d.row_mut(r).iter_mut().zip(gam.as_slice()).zip(inv_std) {
                            *o *= gm * s;
                        }
                    }
                    accumulate(adj, *input, d);
                }
            }
            Op::GroupTopKMean {
                input,
                groups,
                k,
                selected,
            } => {
                let av = val(*input);
                let mut d = DenseMatrix::zeros(av.rows(), av.cols());
                let share = 1.0 / *k as f64;
                for r in 0..av.rows() {
                    for grp in 0..*groups {
                        let w = g.get(r, grp) * share;
                        let base = (r * groups + grp) * k;
                        for &c in &selected[base..base + k] {
                            let cur = d.get(r, c);
                            d.set(r, c, cur + w);
                        }
                    }
                }
                accumulate(adj, *input, d);
            }
            Op::LogSoftmaxGather {
                input,
                targets,
                softmax,
            } => {
                let mut d = DenseMatrix::zeros(softmax.rows(), softmax.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let gr = g.get(r, 0);
                    for (o, s) in d.row_mut(r).iter_mut().zip(softmax.row(r)) {
                        *o = -gr * s;
                    }
                    let cur = d.get(r, t);
                    d.set(r, t, cur + gr);
                }
                accumulate(adj, *input, d);
            }
        }
        Ok(())
    }
}

fn standardize(x: &DenseMatrix, mean: &[f64], inv_std: &[f64]) -> DenseMatrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(inv_std) {
            *v = (*v - m) * s;
        }
    }
    out
}

fn affine_rows(x: &DenseMatrix, gamma: &DenseMatrix, beta: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((v, g), b) in out.row_mut(r).iter_mut().zip(gamma.as_slice()).zip(beta.as_slice()) {
            *v = *v * g + b;
        }
    }
    out
}

fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let values = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).collect();
    DenseMatrix::new(a.rows(), a.cols(), values).expect("hadamard shapes")
}

fn column_dot(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = vec![0.0; a.cols()];
    for r in 0..a.rows() {
        for (o, (x, y)) in out.iter_mut().zip(a.row(r).iter().zip(b.row(r))) {
            *o += x * y;
        }
    }
    DenseMatrix::new(1, a.cols(), out).expect("column_dot shape")
}

fn accumulate(adj: &mut [Option<DenseMatrix>], i: usize, g: DenseMatrix) {
    match &mut adj[i] {
        Some(existing) => existing.add_scaled(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}
