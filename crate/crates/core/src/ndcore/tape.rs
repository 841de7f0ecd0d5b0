use super::lstm::{self, LstmCache};
use super::ops::{self, Activation, NORM_EPS};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddColBias { x: Var, bias: Var },
    Conv1d { x: Var, w: Var, b: Var, stride: usize, patches: Vec<f64> },
    Lstm { x: Var, w: [Var; 4], u: [Var; 4], b: [Var; 4], cache: LstmCache },
    Act { x: Var, kind: Activation },
    NormCols { x: Var, norms: Vec<f64> },
    ColumnDot(Var, Var),
    Column { x: Var, col: usize },
    StackColumns(Vec<Var>),
    CosineBce { scores: Var, label: f64 },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in evaluation order so that one reverse sweep yields
/// gradients for every leaf created with `requires_grad`.
///
/// Inputs always precede their consumers because a node can only reference
/// handles that already exist.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of a scalar with respect to every trainable leaf of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Probability clamp used by [`Tape::cosine_bce`].
pub const PROB_CLAMP: f64 = 1e-7;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite output of {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records an input. A gradient is produced for it iff `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let g = t.requires_grad();
        self.push(t, Op::Leaf, g)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.same_shape(tb) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    /// Adds `bias[m]` to every column of `x[m×n]`.
    pub fn add_col_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = tx.dims2()?;
        if tb.shape() != [m] {
            return Err(Error::ShapeMismatch {
                op: "add_col_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for (i, row) in data.chunks_mut(n).enumerate() {
            let bv = tb.data()[i];
            row.iter_mut().for_each(|v| *v += bv);
        }
        let out = Tensor::from_parts(vec![m, n], data);
        let g = self.needs(&[x, bias]);
        Ok(self.push(out, Op::AddColBias { x, bias }, g))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let d = ops::conv_dims(tx, tw, tb, stride)?;
        let patches = ops::im2col(tx.data(), &d, stride);
        let out = ops::conv_from_patches(&patches, tw.data(), tb.data(), &d);
        let out = Tensor::from_parts(vec![d.c_out, d.t_out], out);
        let g = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Conv1d { x, w, b, stride, patches }, g))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = ops::activation(self.value(x), kind);
        let g = self.needs(&[x]);
        self.push(out, Op::Act { x, kind }, g)
    }

    pub fn unit_normalize_columns(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (d, n) = tx.dims2()?;
        let norms = ops::column_norms(tx.data(), d, n);
        let out = ops::divide_columns(tx, &norms);
        let g = self.needs(&[x]);
        Ok(self.push(out, Op::NormCols { x, norms }, g))
    }

    /// `[d×n], [d×n] → [n]` of per-column inner products.
    pub fn column_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::column_dot(self.value(a), self.value(b))?;
        let g = self.needs(&[a, b]);
        Ok(self.push(out, Op::ColumnDot(a, b), g))
    }

    /// Column `col` of `x[m×n]` as an `m×1` matrix.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if col >= n {
            return Err(Error::invalid(format!("column {col} out of range for {n}")));
        }
        let out = Tensor::from_parts(vec![m, 1], tx.column(col));
        let g = self.needs(&[x]);
        Ok(self.push(out, Op::Column { x, col }, g))
    }

    /// Concatenates `m×1` columns into an `m×n` matrix.
    pub fn stack_columns(&mut self, cols: &[Var]) -> Result<Var> {
        let Some(first) = cols.first() else {
            return Err(Error::invalid("stack_columns needs at least one column"));
        };
        let m = self.value(*first).numel();
        let n = cols.len();
        let mut data = vec![0.0; m * n];
        for (j, c) in cols.iter().enumerate() {
            let t = self.value(*c);
            if t.shape() != [m, 1] {
                return Err(Error::ShapeMismatch {
                    op: "stack_columns",
                    lhs: vec![m, 1],
                    rhs: t.shape().to_vec(),
                });
            }
            for (i, v) in t.data().iter().enumerate() {
                data[i * n + j] = *v;
            }
        }
        let g = self.needs(cols);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], data),
            Op::StackColumns(cols.to_vec()),
            g,
        ))
    }

    /// Mean binary cross entropy of cosine scores `s_t` against `label`,
    /// with `p_t = clamp((1 + s_t)/2, PROB_CLAMP, 1 − PROB_CLAMP)`.
    pub fn cosine_bce(&mut self, scores: Var, label: f64) -> Var {
        let out = Tensor::scalar(cosine_bce_value(self.value(scores).data(), label));
        let g = self.needs(&[scores]);
        self.push(out, Op::CosineBce { scores, label }, g)
    }

    /// Fused LSTM over the columns of `x[in×T]` with zero initial state.
    /// Gate order is (input, forget, candidate, output); returns `[hidden×T]`.
    pub fn lstm(&mut self, x: Var, w: [Var; 4], u: [Var; 4], b: [Var; 4]) -> Result<Var> {
        let (out, cache) = lstm::forward(
            self.value(x),
            w.map(|v| self.value(v)),
            u.map(|v| self.value(v)),
            b.map(|v| self.value(v)),
        )?;
        let mut inputs = vec![x];
        inputs.extend(w.iter().chain(&u).chain(&b));
        let g = self.needs(&inputs);
        Ok(self.push(out, Op::Lstm { x, w, u, b, cache }, g))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        let g = self.needs(&[x]);
        self.push(out, Op::Sum(x), g)
    }

    /// Reverse sweep from a scalar `loss`. Gradients from all paths are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.value.requires_grad()) {
                (Op::Leaf, true) => Some(Tensor::from_parts(
                    node.value.shape().to_vec(),
                    g.unwrap_or_else(|| vec![0.0; node.value.numel()]),
                )),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                if let Some(ga) = self.slot(*a, grads) {
                    ops::matmul_bt_acc(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    ops::matmul_at_acc(ta.data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(*v, grads) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(*a, grads) {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += x * y;
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += x * y;
                    }
                }
            }
            Op::AddColBias { x, bias } => {
                let n = node.value.shape()[1];
                if let Some(gx) = self.slot(*x, grads) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = self.slot(*bias, grads) {
                    for (o, row) in gb.iter_mut().zip(g.chunks(n)) {
                        *o += row.iter().sum::<f64>();
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                patches,
            } => self.conv_backward(*x, *w, *b, *stride, patches, g, grads),
            Op::Lstm { x, w, u, b, cache } => {
                let (tx, wv, uv) = (
                    self.value(*x),
                    w.map(|v| self.value(v)),
                    u.map(|v| self.value(v)),
                );
                let lg = lstm::backward(tx, wv, uv, cache, g);
                if let Some(gx) = self.slot(*x, grads) {
                    gx.iter_mut().zip(&lg.x).for_each(|(o, v)| *o += v);
                }
                for gate in 0..4 {
                    for (var, src) in [(w[gate], &lg.w[gate]), (u[gate], &lg.u[gate]), (b[gate], &lg.b[gate])] {
                        if let Some(gv) = self.slot(var, grads) {
                            gv.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                        }
                    }
                }
            }
            Op::Act { x, kind } => {
                let tx = self.value(*x);
                if let Some(gx) = self.slot(*x, grads) {
                    for (((o, gv), xv), yv) in gx
                        .iter_mut()
                        .zip(g)
                        .zip(tx.data())
                        .zip(node.value.data())
                    {
                        *o += gv * kind.derivative(*xv, *yv);
                    }
                }
            }
            Op::NormCols { x, norms } => {
                let n = norms.len();
                let y = node.value.data();
                let d = y.len() / n;
                // per column: dx = (g − y·⟨y,g⟩)/‖x‖ when ‖x‖ > ε, else g/ε
                let mut proj = vec![0.0; n];
                for i in 0..d {
                    for j in 0..n {
                        proj[j] += y[i * n + j] * g[i * n + j];
                    }
                }
                if let Some(gx) = self.slot(*x, grads) {
                    for i in 0..d {
                        for j in 0..n {
                            let idx = i * n + j;
                            gx[idx] += if norms[j] > NORM_EPS {
                                (g[idx] - y[idx] * proj[j]) / norms[j]
                            } else {
                                g[idx] / NORM_EPS
                            };
                        }
                    }
                }
            }
            Op::ColumnDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = g.len();
                if let Some(ga) = self.slot(*a, grads) {
                    for (idx, (o, bv)) in ga.iter_mut().zip(tb.data()).enumerate() {
                        *o += g[idx % n] * bv;
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    for (idx, (o, av)) in gb.iter_mut().zip(ta.data()).enumerate() {
                        *o += g[idx % n] * av;
                    }
                }
            }
            Op::Column { x, col } => {
                let n = self.value(*x).shape()[1];
                if let Some(gx) = self.slot(*x, grads) {
                    for (i, gv) in g.iter().enumerate() {
                        gx[i * n + col] += gv;
                    }
                }
            }
            Op::StackColumns(cols) => {
                let n = cols.len();
                for (j, c) in cols.iter().enumerate() {
                    if let Some(gc) = self.slot(*c, grads) {
                        for (i, o) in gc.iter_mut().enumerate() {
                            *o += g[i * n + j];
                        }
                    }
                }
            }
            Op::CosineBce { scores, label } => {
                let s = self.value(*scores).data();
                let inv_n = 1.0 / s.len() as f64;
                if let Some(gs) = self.slot(*scores, grads) {
                    for (o, sv) in gs.iter_mut().zip(s) {
                        let raw = 0.5 * (1.0 + sv);
                        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&raw) {
                            continue;
                        }
                        let dl_dp = -label / raw + (1.0 - label) / (1.0 - raw);
                        *o += g[0] * inv_n * dl_dp * 0.5;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(*x, grads) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        patches: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (tx, tw) = (self.value(x), self.value(w));
        let d = ops::conv_dims(tx, tw, self.value(b), stride).expect("validated in forward");
        let ck = d.c_in * d.k;
        if let Some(gb) = self.slot(b, grads) {
            for (o, row) in gb.iter_mut().zip(g.chunks(d.t_out)) {
                *o += row.iter().sum::<f64>();
            }
        }
        // dW = G·Pᵀ
        if let Some(gw) = self.slot(w, grads) {
            ops::matmul_bt_acc(g, patches, gw, d.c_out, d.t_out, ck);
        }
        // dP = Wᵀ·G, scattered back onto the input positions
        if let Some(gx) = self.slot(x, grads) {
            let mut dp = vec![0.0; ck * d.t_out];
            ops::matmul_at_acc(tw.data(), g, &mut dp, d.c_out, ck, d.t_out);
            for c in 0..d.c_in {
                let xrow = &mut gx[c * d.t_in..(c + 1) * d.t_in];
                for j in 0..d.k {
                    let prow = &dp[(c * d.k + j) * d.t_out..(c * d.k + j + 1) * d.t_out];
                    for (t, v) in prow.iter().enumerate() {
                        xrow[t * stride + j] += v;
                    }
                }
            }
        }
    }

    /// Gradient accumulator of `v`, or `None` when no gradient flows to it.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(
            grads[v.0]
                .get_or_insert_with(|| vec![0.0; node.value.numel()])
                .as_mut_slice(),
        )
    }
}

/// Mean clamped BCE of cosine scores; the forward value of [`Tape::cosine_bce`].
pub fn cosine_bce_value(scores: &[f64], label: f64) -> f64 {
    let total: f64 = scores
        .iter()
        .map(|s| {
            let p = (0.5 * (1.0 + s)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
        })
        .sum();
    total / scores.len() as f64
}
