//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records a computation as a flat list of nodes, each holding its
//! value (a row-major matrix) and the operation that produced it. Calling
//! [`Tape::backward`] on a scalar node replays the tape in reverse,
//! accumulating gradients via the chain rule.
//!
//! The builder API is closed: only the primitives below can appear in a
//! graph, so gradients are defined for every representable loss. Fused
//! Gaussian terms (log-prob, KL, entropy) are primitives of their own with
//! hand-derived adjoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::gaussian::LN_2PI;
use super::params::ParamSet;
use super::tensor::{axpy, matmul_nt, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    /// Constant input; no gradient is tracked.
    Const,
    /// Named trainable leaf; the name lives in the caller's var map.
    Param,
    /// `x[n,k] @ w[m,k]^T -> [n,m]`.
    MatMulNT { x: Var, w: Var },
    /// Row-broadcast add: `[n,m] + [1,m]`.
    AddRow { x: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    MulElem { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    Relu { x: Var },
    Tanh { x: Var },
    Softplus { x: Var },
    Exp { x: Var },
    Ln { x: Var },
    /// Elementwise `min(x, c)`; subgradient passes where `x < c`.
    MinScalar { x: Var, c: f64 },
    /// Mean over rows `start..start+len` -> `[1,m]`.
    MeanRowsRange { x: Var, start: usize, len: usize },
    SumAll { x: Var },
    ConcatCols { a: Var, b: Var },
    /// `[1,m] -> [n,m]` by repetition.
    BroadcastRows { x: Var, n: usize },
    SliceCols { x: Var, start: usize, len: usize },
    /// Gather rows of a `[v,m]` table -> `[idx.len(),m]`.
    SelectRows { table: Var, idx: Vec<usize> },
    /// `Σ_ij log N(obs_ij; mean_ij, stddev_ij) -> [1,1]`.
    GaussLogProb { mean: Var, stddev: Var, obs: Vec<f64> },
    /// `KL(N(mean_q, std_q) ‖ N(mean_p, std_p)) -> [1,1]`.
    GaussKl { mean_q: Var, std_q: Var, mean_p: Var, std_p: Var },
    /// `Σ_j ½ln(2πe σ_j²) -> [1,1]`.
    GaussEntropy { stddev: Var },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// A recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a `[1,1]` node.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let n = &self.nodes[v.0];
        if n.value.len() != 1 {
            return Err(Error::dimension("Tape::scalar_value", 1, n.value.len()));
        }
        Ok(n.value[0])
    }

    // ---- leaves ------------------------------------------------------

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::dimension("Tape::constant", rows * cols, data.len()));
        }
        Ok(self.push(rows, cols, data, Op::Const))
    }

    pub fn constant_row(&mut self, data: Vec<f64>) -> Var {
        let c = data.len();
        self.push(1, c, data, Op::Const)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.push(1, 1, vec![v], Op::Const)
    }

    fn param_view(&mut self, t: &Tensor) -> Var {
        // vectors register as a single row, matrices keep their shape
        let (rows, cols) = if t.shape().len() == 2 {
            (t.shape()[0], t.shape()[1])
        } else {
            (1, t.len())
        };
        self.push(rows, cols, t.data().to_vec(), Op::Param)
    }

    /// Register every parameter of `params` as a leaf; returns name -> Var.
    pub fn register_params(&mut self, params: &ParamSet) -> BTreeMap<String, Var> {
        params
            .iter()
            .map(|(name, t)| (name.clone(), self.param_view(t)))
            .collect()
    }

    // ---- ops ---------------------------------------------------------

    /// `x[n,k] @ w[m,k]^T`; `w` is a weight matrix stored `[out, in]`.
    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, k) = self.shape(x);
        let (m, kw) = self.shape(w);
        if k != kw {
            return Err(Error::dimension("Tape::matmul_nt", k, kw));
        }
        let value = matmul_nt(&self.nodes[x.0].value, n, k, &self.nodes[w.0].value, m);
        Ok(self.push(n, m, value, Op::MatMulNT { x, w }))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.shape(x);
        let (rb, mb) = self.shape(b);
        if rb != 1 || mb != m {
            return Err(Error::dimension("Tape::add_row", m, rb * mb));
        }
        let mut value = self.nodes[x.0].value.clone();
        let brow = &self.nodes[b.0].value;
        for chunk in value.chunks_exact_mut(m) {
            for (v, bv) in chunk.iter_mut().zip(brow) {
                *v += bv;
            }
        }
        Ok(self.push(n, m, value, Op::AddRow { x, b }))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, which: &str) -> Result<(usize, usize)> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::dimension(format!("Tape::{which}"), ra * ca, rb * cb));
        }
        Ok((ra, ca))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape(a, b, "add")?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(r, c, value, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape(a, b, "sub")?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(r, c, value, Op::Sub { a, b }))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape(a, b, "mul_elem")?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(r, c, value, Op::MulElem { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (r, co) = self.shape(x);
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        self.push(r, co, value, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let (r, co) = self.shape(x);
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v + c).collect();
        self.push(r, co, value, Op::AddScalar { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        self.push(r, c, value, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(r, c, value, Op::Tanh { x })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| softplus(*v)).collect();
        self.push(r, c, value, Op::Softplus { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.exp()).collect();
        self.push(r, c, value, Op::Exp { x })
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.ln()).collect();
        self.push(r, c, value, Op::Ln { x })
    }

    pub fn min_scalar(&mut self, x: Var, c: f64) -> Var {
        let (r, co) = self.shape(x);
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.min(c)).collect();
        self.push(r, co, value, Op::MinScalar { x, c })
    }

    /// Mean over the row range `start..start+len`.
    pub fn mean_rows_range(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.shape(x);
        if len == 0 || start + len > n {
            return Err(Error::invalid(
                "Tape::mean_rows_range",
                format!("range {start}..{} out of {n} rows", start + len),
            ));
        }
        let mut value = vec![0.0; m];
        for i in start..start + len {
            axpy(
                1.0 / len as f64,
                &self.nodes[x.0].value[i * m..(i + 1) * m],
                &mut value,
            );
        }
        Ok(self.push(1, m, value, Op::MeanRowsRange { x, start, len }))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, _) = self.shape(x);
        self.mean_rows_range(x, 0, n)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::SumAll { x })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca) = self.shape(a);
        let (nb, cb) = self.shape(b);
        if na != nb {
            return Err(Error::dimension("Tape::concat_cols", na, nb));
        }
        let mut value = Vec::with_capacity(na * (ca + cb));
        for i in 0..na {
            value.extend_from_slice(&self.nodes[a.0].value[i * ca..(i + 1) * ca]);
            value.extend_from_slice(&self.nodes[b.0].value[i * cb..(i + 1) * cb]);
        }
        Ok(self.push(na, ca + cb, value, Op::ConcatCols { a, b }))
    }

    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, m) = self.shape(x);
        if r != 1 {
            return Err(Error::dimension("Tape::broadcast_rows", 1, r));
        }
        let mut value = Vec::with_capacity(n * m);
        for _ in 0..n {
            value.extend_from_slice(&self.nodes[x.0].value);
        }
        Ok(self.push(n, m, value, Op::BroadcastRows { x, n }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.shape(x);
        if start + len > m {
            return Err(Error::invalid(
                "Tape::slice_cols",
                format!("slice {start}..{} out of {m} cols", start + len),
            ));
        }
        let mut value = Vec::with_capacity(n * len);
        for i in 0..n {
            value.extend_from_slice(&self.nodes[x.0].value[i * m + start..i * m + start + len]);
        }
        Ok(self.push(n, len, value, Op::SliceCols { x, start, len }))
    }

    pub fn select_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (v, m) = self.shape(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::invalid(
                "Tape::select_rows",
                format!("row index {bad} out of {v}"),
            ));
        }
        let mut value = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            value.extend_from_slice(&self.nodes[table.0].value[i * m..(i + 1) * m]);
        }
        Ok(self.push(
            idx.len(),
            m,
            value,
            Op::SelectRows {
                table,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Summed Gaussian log density of fixed observations under `(mean, stddev)`.
    pub fn gauss_log_prob(&mut self, mean: Var, stddev: Var, obs: &[f64]) -> Result<Var> {
        let (r, c) = self.binary_same_shape(mean, stddev, "gauss_log_prob")?;
        if obs.len() != r * c {
            return Err(Error::dimension("Tape::gauss_log_prob", r * c, obs.len()));
        }
        let mut lp = 0.0;
        for i in 0..obs.len() {
            let m = self.nodes[mean.0].value[i];
            let s = self.nodes[stddev.0].value[i];
            let d = obs[i] - m;
            lp += -0.5 * LN_2PI - s.ln() - d * d / (2.0 * s * s);
        }
        Ok(self.push(
            1,
            1,
            vec![lp],
            Op::GaussLogProb {
                mean,
                stddev,
                obs: obs.to_vec(),
            },
        ))
    }

    /// Closed-form KL between diagonal Gaussians given as mean/stddev nodes.
    pub fn gauss_kl(&mut self, mean_q: Var, std_q: Var, mean_p: Var, std_p: Var) -> Result<Var> {
        let (r, c) = self.binary_same_shape(mean_q, std_q, "gauss_kl")?;
        let (rp, cp) = self.binary_same_shape(mean_p, std_p, "gauss_kl")?;
        if (r, c) != (rp, cp) {
            return Err(Error::dimension("Tape::gauss_kl", r * c, rp * cp));
        }
        let mut kl = 0.0;
        for i in 0..r * c {
            let mq = self.nodes[mean_q.0].value[i];
            let sq = self.nodes[std_q.0].value[i];
            let mp = self.nodes[mean_p.0].value[i];
            let sp = self.nodes[std_p.0].value[i];
            let dm = mq - mp;
            kl += (sp / sq).ln() + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
        }
        Ok(self.push(
            1,
            1,
            vec![kl],
            Op::GaussKl {
                mean_q,
                std_q,
                mean_p,
                std_p,
            },
        ))
    }

    /// Summed entropy of a diagonal Gaussian with the given stddev node.
    pub fn gauss_entropy(&mut self, stddev: Var) -> Var {
        let h: f64 = self.nodes[stddev.0]
            .value
            .iter()
            .map(|s| 0.5 * (LN_2PI + 1.0) + s.ln())
            .sum();
        self.push(1, 1, vec![h], Op::GaussEntropy { stddev })
    }

    // ---- backward ----------------------------------------------------

    /// Reverse pass from a scalar `loss` node. Returns one gradient buffer
    /// per node (empty for nodes the loss does not depend on).
    pub fn backward(&self, loss: Var) -> Result<Vec<Vec<f64>>> {
        let ln = &self.nodes[loss.0];
        if ln.rows * ln.cols != 1 {
            return Err(Error::dimension("Tape::backward", 1, ln.rows * ln.cols));
        }
        if !ln.value[0].is_finite() {
            return Err(Error::numeric("Tape::backward", "loss is not finite"));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];

        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Const | Op::Param => {
                    grads[i] = g;
                    continue;
                }
                Op::MatMulNT { x, w } => {
                    let (n, k) = self.shape(*x);
                    let (m, _) = self.shape(*w);
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let gx = ensure(&mut grads, *x, self);
                    for ri in 0..n {
                        for j in 0..m {
                            axpy(g[ri * m + j], &wv[j * k..(j + 1) * k], &mut gx[ri * k..(ri + 1) * k]);
                        }
                    }
                    let gw = ensure(&mut grads, *w, self);
                    for ri in 0..n {
                        let xr = &xv[ri * k..(ri + 1) * k];
                        for j in 0..m {
                            axpy(g[ri * m + j], xr, &mut gw[j * k..(j + 1) * k]);
                        }
                    }
                }
                Op::AddRow { x, b } => {
                    let (_, m) = self.shape(*x);
                    accumulate(&mut grads, *x, &g, self);
                    let gb = ensure(&mut grads, *b, self);
                    for chunk in g.chunks_exact(m) {
                        for (o, v) in gb.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, &g, self);
                    accumulate(&mut grads, *b, &g, self);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, &g, self);
                    let gb = ensure(&mut grads, *b, self);
                    for (o, v) in gb.iter_mut().zip(&g) {
                        *o -= v;
                    }
                }
                Op::MulElem { a, b } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    {
                        let ga = ensure(&mut grads, *a, self);
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    }
                    let gb = ensure(&mut grads, *b, self);
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
                Op::Scale { x, c } => {
                    let gx = ensure(&mut grads, *x, self);
                    axpy(*c, &g, gx);
                }
                Op::AddScalar { x } => {
                    accumulate(&mut grads, *x, &g, self);
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = ensure(&mut grads, *x, self);
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Tanh { x } => {
                    let yv = &node.value;
                    let gx = ensure(&mut grads, *x, self);
                    for i in 0..g.len() {
                        gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
                    }
                }
                Op::Softplus { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = ensure(&mut grads, *x, self);
                    for i in 0..g.len() {
                        gx[i] += g[i] * sigmoid(xv[i]);
                    }
                }
                Op::Exp { x } => {
                    let yv = &node.value;
                    let gx = ensure(&mut grads, *x, self);
                    for i in 0..g.len() {
                        gx[i] += g[i] * yv[i];
                    }
                }
                Op::Ln { x } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = ensure(&mut grads, *x, self);
                    for i in 0..g.len() {
                        gx[i] += g[i] / xv[i];
                    }
                }
                Op::MinScalar { x, c } => {
                    let xv = &self.nodes[x.0].value;
                    let gx = ensure(&mut grads, *x, self);
                    for i in 0..g.len() {
                        if xv[i] < *c {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::MeanRowsRange { x, start, len } => {
                    let (_, m) = self.shape(*x);
                    let inv = 1.0 / *len as f64;
                    let gx = ensure(&mut grads, *x, self);
                    for i in *start..start + len {
                        axpy(inv, &g, &mut gx[i * m..(i + 1) * m]);
                    }
                }
                Op::SumAll { x } => {
                    let gx = ensure(&mut grads, *x, self);
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
                Op::ConcatCols { a, b } => {
                    let (n, ca) = self.shape(*a);
                    let (_, cb) = self.shape(*b);
                    {
                        let ga = ensure(&mut grads, *a, self);
                        for i in 0..n {
                            for j in 0..ca {
                                ga[i * ca + j] += g[i * (ca + cb) + j];
                            }
                        }
                    }
                    let gb = ensure(&mut grads, *b, self);
                    for i in 0..n {
                        for j in 0..cb {
                            gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                        }
                    }
                }
                Op::BroadcastRows { x, n } => {
                    let (_, m) = self.shape(*x);
                    let gx = ensure(&mut grads, *x, self);
                    for i in 0..*n {
                        axpy(1.0, &g[i * m..(i + 1) * m], gx);
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let (n, m) = self.shape(*x);
                    let gx = ensure(&mut grads, *x, self);
                    for i in 0..n {
                        for j in 0..*len {
                            gx[i * m + start + j] += g[i * len + j];
                        }
                    }
                }
                Op::SelectRows { table, idx } => {
                    let (_, m) = self.shape(*table);
                    let gt = ensure(&mut grads, *table, self);
                    for (r, &row) in idx.iter().enumerate() {
                        axpy(1.0, &g[r * m..(r + 1) * m], &mut gt[row * m..(row + 1) * m]);
                    }
                }
                Op::GaussLogProb { mean, stddev, obs } => {
                    let mv = &self.nodes[mean.0].value;
                    let sv = &self.nodes[stddev.0].value;
                    {
                        let gm = ensure(&mut grads, *mean, self);
                        for i in 0..obs.len() {
                            gm[i] += g[0] * (obs[i] - mv[i]) / (sv[i] * sv[i]);
                        }
                    }
                    let gs = ensure(&mut grads, *stddev, self);
                    for i in 0..obs.len() {
                        let d = obs[i] - mv[i];
                        gs[i] += g[0] * (-1.0 / sv[i] + d * d / (sv[i] * sv[i] * sv[i]));
                    }
                }
                Op::GaussKl {
                    mean_q,
                    std_q,
                    mean_p,
                    std_p,
                } => {
                    let mqv = &self.nodes[mean_q.0].value;
                    let sqv = &self.nodes[std_q.0].value;
                    let mpv = &self.nodes[mean_p.0].value;
                    let spv = &self.nodes[std_p.0].value;
                    let n = mqv.len();
                    {
                        let gmq = ensure(&mut grads, *mean_q, self);
                        for i in 0..n {
                            gmq[i] += g[0] * (mqv[i] - mpv[i]) / (spv[i] * spv[i]);
                        }
                    }
                    {
                        let gsq = ensure(&mut grads, *std_q, self);
                        for i in 0..n {
                            gsq[i] += g[0] * (-1.0 / sqv[i] + sqv[i] / (spv[i] * spv[i]));
                        }
                    }
                    {
                        let gmp = ensure(&mut grads, *mean_p, self);
                        for i in 0..n {
                            gmp[i] -= g[0] * (mqv[i] - mpv[i]) / (spv[i] * spv[i]);
                        }
                    }
                    let gsp = ensure(&mut grads, *std_p, self);
                    for i in 0..n {
                        let dm = mqv[i] - mpv[i];
                        gsp[i] += g[0]
                            * (1.0 / spv[i]
                                - (sqv[i] * sqv[i] + dm * dm) / (spv[i] * spv[i] * spv[i]));
                    }
                }
                Op::GaussEntropy { stddev } => {
                    let sv = &self.nodes[stddev.0].value;
                    let gs = ensure(&mut grads, *stddev, self);
                    for i in 0..sv.len() {
                        gs[i] += g[0] / sv[i];
                    }
                }
            }
            grads[i] = g;
        }
        Ok(grads)
    }

    /// Run a backward pass and collect the gradients of all named parameters
    /// registered in `vars`, shaped like `params`.
    pub fn param_grads(
        &self,
        loss: Var,
        vars: &BTreeMap<String, Var>,
        params: &ParamSet,
    ) -> Result<ParamSet> {
        let grads = self.backward(loss)?;
        let mut out = ParamSet::new();
        for (name, var) in vars {
            let shape = params
                .get(name)
                .ok_or_else(|| Error::invalid("Tape::param_grads", format!("unknown param {name:?}")))?
                .shape()
                .to_vec();
            let buf = if grads[var.0].is_empty() {
                vec![0.0; shape.iter().product()]
            } else {
                grads[var.0].clone()
            };
            // gradients may legitimately be non-finite on a diverged loss;
            // surface that as a numeric error naming the parameter
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("gradient({name})"),
                    "non-finite gradient",
                ));
            }
            out.insert(name.clone(), Tensor::new(shape, buf)?)?;
        }
        Ok(out)
    }
}

fn ensure<'a>(grads: &'a mut [Vec<f64>], v: Var, tape: &Tape) -> &'a mut Vec<f64> {
    if grads[v.0].is_empty() {
        let n = tape.nodes[v.0].value.len();
        grads[v.0] = vec![0.0; n];
    }
    &mut grads[v.0]
}

fn accumulate(grads: &mut [Vec<f64>], v: Var, g: &[f64], tape: &Tape) {
    let gv = ensure(grads, v, tape);
    axpy(1.0, g, gv);
}

/// Gradient of a scalar-valued loss with respect to every parameter.
///
/// The closure builds the loss from registered parameter nodes; the return
/// value is `(loss, per-parameter gradients)`.
pub fn gradient<F>(params: &ParamSet, build: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.register_params(params);
    let loss = build(&mut tape, &vars)?;
    let value = tape.scalar_value(loss)?;
    let grads = tape.param_grads(loss, &vars, params)?;
    Ok((value, grads))
}
