//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every operation applied to it as a node holding the
//! forward value. [`Graph::backward`] walks the nodes in reverse creation
//! order, which is a valid topological order because an operation can only
//! consume nodes that already exist.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hasher};
use std::sync::Arc;

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{add_assign, gemm};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const BATCHNORM_EPS: f32 = 1e-5;
pub const LAYERNORM_EPS: f32 = 1e-5;
/// Weight kept on the old running statistic at each batch-norm update.
pub const BATCHNORM_MOMENTUM: f32 = 0.9;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm normalizes with batch statistics and updates its buffers.
    Train,
    /// Batch norm uses its running statistics.
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Softmax(Var),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        alpha: f32,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Concat(Vec<Var>),
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    SwapMiddle(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Forward values and the operations that produced them.
pub struct Graph<'s> {
    store: &'s ParamStore,
    mode: Mode,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    buffer_updates: Vec<(ParamId, Tensor)>,
    branches: Option<DefaultHasher>,
    consumed: bool,
}

fn check_last(op: &'static str, t: &Tensor, want: usize) -> Result<()> {
    if t.shape().is_empty() || t.last_dim() != want {
        return Err(shape_err(op, format!("expected last axis {want}, got shape {:?}", t.shape())));
    }
    Ok(())
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            store,
            mode,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            buffer_updates: Vec::new(),
            branches: None,
            consumed: false,
        }
    }

    /// Records a hash of every piecewise branch taken from here on (ReLU
    /// signs, maxpool argmaxes). Off by default since it costs a pass over
    /// every activation.
    pub fn track_branches(mut self) -> Self {
        self.branches = Some(DefaultHasher::new());
        self
    }

    /// Two forward passes with equal signatures evaluate the same smooth
    /// function. `None` unless [`Graph::track_branches`] was called.
    pub fn branch_signature(&self) -> Option<u64> {
        self.branches.as_ref().map(Hasher::finish)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_shared(Arc::new(value), op)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input. Gradients with respect to it are still reported.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// The node for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push_shared(self.store.shared(id), Op::Param(id));
        self.param_nodes.insert(id, v);
        v
    }

    /// Running-statistic updates produced by batch norm in training mode.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// `x · w + b` over the last axis; `w` is `[Cin, Cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if wt.shape().len() != 2 {
            return Err(shape_err("linear", format!("weight must be 2-D, got {:?}", wt.shape())));
        }
        let (cin, cout) = (wt.shape()[0], wt.shape()[1]);
        check_last("linear", xt, cin)?;
        let rows = xt.rows();
        let mut out = vec![0.0; rows * cout];
        gemm(rows, cin, cout, xt.data(), false, wt.data(), false, &mut out, 1.0, false);
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.shape() != [cout] {
                return Err(shape_err("linear", format!("bias {:?} for width {cout}", bt.shape())));
            }
            for row in out.chunks_mut(cout) {
                add_assign(row, bt.data());
            }
        }
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().expect("checked non-scalar") = cout;
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        add_assign(out.data_mut(), self.value(b).data());
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        if let Some(h) = &mut self.branches {
            for chunk in out.data().chunks(64) {
                let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, v)| acc | (u64::from(*v > 0.0) << i));
                h.write_u64(bits);
            }
        }
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// Batch normalization over every axis but the last.
    ///
    /// In [`Mode::Train`] the leading (batch) axis must have at least two
    /// entries; the batch statistics normalize the input and the running
    /// statistics are scheduled for update (see [`Graph::take_buffer_updates`]).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var> {
        let xt = Arc::clone(&self.nodes[x.0].value);
        let c = xt.last_dim();
        for v in [gamma, beta] {
            if self.shape(v) != [c] {
                return Err(shape_err("batch_norm", format!("affine {:?} for width {c}", self.shape(v))));
            }
        }
        let rows = xt.rows();
        let (mean, var, batch_stats) = match self.mode {
            Mode::Train => {
                if xt.shape().len() < 2 || xt.shape()[0] < 2 {
                    return Err(NnError::Invalid(format!(
                        "batch_norm in training mode needs a batch of at least 2, got shape {:?}",
                        xt.shape()
                    )));
                }
                let mut mean = vec![0.0f64; c];
                for row in xt.data().chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += f64::from(*v);
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0f64; c];
                for row in xt.data().chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = f64::from(*v) - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                let mean32: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
                let var32: Vec<f32> = var.iter().map(|&v| v as f32).collect();

                let unbiased = rows as f32 / (rows as f32 - 1.0);
                let blend = |old: &Tensor, new: &[f32], factor: f32| {
                    let data = old
                        .data()
                        .iter()
                        .zip(new)
                        .map(|(o, n)| BATCHNORM_MOMENTUM * o + (1.0 - BATCHNORM_MOMENTUM) * n * factor)
                        .collect();
                    Tensor::new(old.shape().to_vec(), data)
                };
                let rm = blend(self.store.get(running_mean), &mean32, 1.0)?;
                let rv = blend(self.store.get(running_var), &var32, unbiased)?;
                self.buffer_updates.push((running_mean, rm));
                self.buffer_updates.push((running_var, rv));
                (mean, var, true)
            }
            Mode::Eval => (
                self.store.get(running_mean).data().iter().map(|&v| f64::from(v)).collect(),
                self.store.get(running_var).data().iter().map(|&v| f64::from(v)).collect(),
                false,
            ),
        };
        let inv64: Vec<f64> = var.iter().map(|v| 1.0 / (v + f64::from(BATCHNORM_EPS)).sqrt()).collect();
        let inv_std: Vec<f32> = inv64.iter().map(|&v| v as f32).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xt.len()];
        let mut out = vec![0.0; xt.len()];
        for ((row, hrow), orow) in xt.data().chunks(c).zip(xhat.chunks_mut(c)).zip(out.chunks_mut(c)) {
            for j in 0..c {
                let h = (f64::from(row[j]) - mean[j]) * inv64[j];
                hrow[j] = h as f32;
                orow[j] = (f64::from(g[j]) * h + f64::from(b[j])) as f32;
            }
        }
        let shape = xt.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.last_dim();
        for v in [gamma, beta] {
            if self.shape(v) != [c] {
                return Err(shape_err("layer_norm", format!("affine {:?} for width {c}", self.shape(v))));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xt.len()];
        let mut out = vec![0.0; xt.len()];
        let mut inv_std = Vec::with_capacity(xt.rows());
        for ((row, hrow), orow) in xt.data().chunks(c).zip(xhat.chunks_mut(c)).zip(out.chunks_mut(c)) {
            let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / c as f64;
            let inv64 = 1.0 / (var + f64::from(LAYERNORM_EPS)).sqrt();
            let inv = inv64 as f32;
            for j in 0..c {
                let h = (f64::from(row[j]) - mean) * inv64;
                hrow[j] = h as f32;
                orow[j] = (f64::from(g[j]) * h + f64::from(b[j])) as f32;
            }
            inv_std.push(inv);
        }
        let shape = xt.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.shape().is_empty() || xt.last_dim() == 0 {
            return Err(shape_err("softmax", format!("empty axis in shape {:?}", xt.shape())));
        }
        let mut out = xt.clone();
        for row in out.data_mut().chunks_mut(xt.last_dim()) {
            softmax_row(row);
        }
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Batched product of `a: [G, M, K]` with `b: [G, K, N]`, or with
    /// `b: [G, N, K]` transposed when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        self.scaled_matmul(a, b, trans_b, 1.0)
    }

    /// `alpha · matmul(a, b, trans_b)`, rounded once.
    pub fn scaled_matmul(&mut self, a: Var, b: Var, trans_b: bool, alpha: f32) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (sa, sb) = (at.shape(), bt.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let mut out = vec![0.0; g * m * n];
        for i in 0..g {
            gemm(
                m,
                k,
                n,
                &at.data()[i * m * k..],
                false,
                &bt.data()[i * k * n..],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                alpha,
                false,
            );
        }
        Ok(self.push(Tensor::new(vec![g, m, n], out)?, Op::MatMul { a, b, trans_b, alpha }))
    }

    /// Maximum over the second-to-last axis: `[..., K, C] → [..., C]`.
    /// The gradient goes to the first maximal slot.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if s.len() < 2 || s[s.len() - 2] == 0 {
            return Err(shape_err("max_pool", format!("need [..., K>=1, C], got {s:?}")));
        }
        let (k, c) = (s[s.len() - 2], s[s.len() - 1]);
        let groups = xt.len() / (k * c).max(1);
        let mut out = vec![0.0; groups * c];
        let mut argmax = vec![0u32; groups * c];
        for gi in 0..groups {
            let block = &xt.data()[gi * k * c..(gi + 1) * k * c];
            let (orow, arow) = (&mut out[gi * c..(gi + 1) * c], &mut argmax[gi * c..(gi + 1) * c]);
            orow.copy_from_slice(&block[..c]);
            for slot in 1..k {
                for j in 0..c {
                    let v = block[slot * c + j];
                    if v > orow[j] {
                        orow[j] = v;
                        arow[j] = slot as u32;
                    }
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.push(c);
        if let Some(h) = &mut self.branches {
            argmax.iter().for_each(|&a| h.write_u32(a));
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxPool { x, argmax }))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let lead = &self.shape(first)[..self.shape(first).len().saturating_sub(1)];
        if self.shape(first).is_empty() {
            return Err(shape_err("concat", "scalar input"));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(shape_err("concat", format!("{s:?} vs leading {lead:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows = self.value(first).rows();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            for (r, src) in self.value(p).data().chunks(w.max(1)).enumerate().take(rows) {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&src[..w]);
            }
            offset += w;
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec())))
    }

    /// Gathers rows of `src` viewed as `[R, C]` into a tensor of `shape`,
    /// whose last axis must be `C` and whose row count is `index.len()`.
    pub fn gather_rows(&mut self, src: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let st = self.value(src);
        let c = st.last_dim();
        let rows = st.rows();
        if shape.last() != Some(&c) || shape.iter().product::<usize>() != index.len() * c {
            return Err(shape_err("gather_rows", format!("{} rows of width {c} into {shape:?}", index.len())));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} out of range for {rows} rows")));
        }
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in &index {
            out.extend_from_slice(&st.data()[i * c..(i + 1) * c]);
        }
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::Gather { src, index }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = Tensor::clone(self.value(x)).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// `[A, B, C, D] → [A, C, B, D]`.
    pub fn swap_middle(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if s.len() != 4 {
            return Err(shape_err("swap_middle", format!("need rank 4, got {s:?}")));
        }
        let out = swap_middle_data(xt.data(), [s[0], s[1], s[2], s[3]]);
        Ok(self.push(Tensor::new(vec![s[0], s[2], s[1], s[3]], out)?, Op::SwapMiddle(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| f64::from(v)).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().map(|&v| f64::from(v)).sum();
        let n = t.len().max(1) as f64;
        self.push(Tensor::scalar((s / n) as f32), Op::Mean(x))
    }

    /// Mean cross-entropy of `logits: [B, classes]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lt = self.value(logits);
        let s = lt.shape();
        if s.len() != 2 || s[0] != labels.len() || s[1] == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {s:?} for {} labels", labels.len()),
            ));
        }
        let n = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(NnError::Invalid(format!("label {bad} out of range for {n} classes")));
        }
        let mut probs = lt.data().to_vec();
        let mut loss = 0.0f64;
        for (row, &label) in probs.chunks_mut(n).zip(labels) {
            let max = f64::from(row.iter().copied().fold(f32::NEG_INFINITY, f32::max));
            let log_sum: f64 = row.iter().map(|&v| (f64::from(v) - max).exp()).sum::<f64>().ln();
            loss += log_sum - (f64::from(row[label]) - max);
            softmax_row(row);
        }
        loss /= labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss as f32),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    ///
    /// Can run once per graph; a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(NnError::BackwardTwice);
        }
        let loss_shape = self.shape(loss).to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(NnError::NonScalarLoss(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(loss_shape, vec![1.0])?);
        let mut params: Vec<Option<Tensor>> = self
            .store
            .ids()
            .map(|id| {
                self.store
                    .is_trainable(id)
                    .then(|| Tensor::zeros(self.store.get(id).shape()))
            })
            .collect();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads, &mut params)?;
            grads[i] = Some(dy);
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn backprop_node(
        &self,
        i: usize,
        dy: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut [Option<Tensor>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                if let Some(g) = params[id.0].as_mut() {
                    add_assign(g.data_mut(), dy.data());
                }
            }
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (cin, cout) = (wt.shape()[0], wt.shape()[1]);
                let rows = xt.rows();
                let mut dx = vec![0.0; rows * cin];
                gemm(rows, cout, cin, dy.data(), false, wt.data(), true, &mut dx, 1.0, false);
                accumulate(grads, *x, xt.shape(), dx)?;
                let mut dw = vec![0.0; cin * cout];
                gemm(cin, rows, cout, xt.data(), true, dy.data(), false, &mut dw, 1.0, false);
                accumulate(grads, *w, wt.shape(), dw)?;
                if let Some(b) = b {
                    let mut db = vec![0.0; cout];
                    for row in dy.data().chunks(cout) {
                        add_assign(&mut db, row);
                    }
                    accumulate(grads, *b, &[cout], db)?;
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, dy.shape(), dy.data().to_vec())?;
                accumulate(grads, *b, dy.shape(), dy.data().to_vec())?;
            }
            Op::Mul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let da = dy.data().iter().zip(bt.data()).map(|(g, v)| g * v).collect();
                let db = dy.data().iter().zip(at.data()).map(|(g, v)| g * v).collect();
                accumulate(grads, *a, dy.shape(), da)?;
                accumulate(grads, *b, dy.shape(), db)?;
            }
            Op::Scale(x, s) => {
                accumulate(grads, *x, dy.shape(), dy.data().iter().map(|g| g * s).collect())?;
            }
            Op::Relu(x) => {
                let dx = dy
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, dy.shape(), dx)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = dy.last_dim();
                let rows = dy.rows();
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for (drow, hrow) in dy.data().chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        dgamma[j] += f64::from(drow[j] * hrow[j]);
                        dbeta[j] += f64::from(drow[j]);
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                if *batch_stats {
                    let r = rows as f32;
                    for ((drow, hrow), xrow) in dy.data().chunks(c).zip(xhat.chunks(c)).zip(dx.chunks_mut(c)) {
                        for j in 0..c {
                            let sum_dxhat = g[j] * dbeta[j] as f32;
                            let sum_dxhat_xhat = g[j] * dgamma[j] as f32;
                            let dxhat = drow[j] * g[j];
                            xrow[j] = inv_std[j] / r * (r * dxhat - sum_dxhat - hrow[j] * sum_dxhat_xhat);
                        }
                    }
                } else {
                    for (drow, xrow) in dy.data().chunks(c).zip(dx.chunks_mut(c)) {
                        for j in 0..c {
                            xrow[j] = drow[j] * g[j] * inv_std[j];
                        }
                    }
                }
                accumulate(grads, *x, dy.shape(), dx)?;
                accumulate(grads, *gamma, &[c], dgamma.iter().map(|&v| v as f32).collect())?;
                accumulate(grads, *beta, &[c], dbeta.iter().map(|&v| v as f32).collect())?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = dy.last_dim();
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; dy.len()];
                let cf = c as f32;
                for (((drow, hrow), xrow), inv) in dy
                    .data()
                    .chunks(c)
                    .zip(xhat.chunks(c))
                    .zip(dx.chunks_mut(c))
                    .zip(inv_std)
                {
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for j in 0..c {
                        let dxhat = drow[j] * g[j];
                        sum_d += dxhat;
                        sum_dh += dxhat * hrow[j];
                        dgamma[j] += drow[j] * hrow[j];
                        dbeta[j] += drow[j];
                    }
                    for j in 0..c {
                        xrow[j] = inv / cf * (cf * drow[j] * g[j] - sum_d - hrow[j] * sum_dh);
                    }
                }
                accumulate(grads, *x, dy.shape(), dx)?;
                accumulate(grads, *gamma, &[c], dgamma)?;
                accumulate(grads, *beta, &[c], dbeta)?;
            }
            Op::Softmax(x) => {
                let c = dy.last_dim();
                let mut dx = vec![0.0; dy.len()];
                for ((drow, yrow), xrow) in dy.data().chunks(c).zip(out.data().chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f32 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                    for j in 0..c {
                        xrow[j] = yrow[j] * (drow[j] - dot);
                    }
                }
                accumulate(grads, *x, dy.shape(), dx)?;
            }
            Op::MatMul { a, b, trans_b, alpha } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (g, m, k) = (at.shape()[0], at.shape()[1], at.shape()[2]);
                let n = dy.shape()[2];
                let mut da = vec![0.0; g * m * k];
                let mut db = vec![0.0; bt.len()];
                for i in 0..g {
                    let dyi = &dy.data()[i * m * n..(i + 1) * m * n];
                    let ai = &at.data()[i * m * k..(i + 1) * m * k];
                    let bi = &bt.data()[i * k * n..(i + 1) * k * n];
                    let dai = &mut da[i * m * k..(i + 1) * m * k];
                    let dbi = &mut db[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        // c = a · bᵀ with b stored [n, k].
                        gemm(m, n, k, dyi, false, bi, false, dai, *alpha, false);
                        gemm(n, m, k, dyi, true, ai, false, dbi, *alpha, false);
                    } else {
                        gemm(m, n, k, dyi, false, bi, true, dai, *alpha, false);
                        gemm(k, m, n, ai, true, dyi, false, dbi, *alpha, false);
                    }
                }
                accumulate(grads, *a, at.shape(), da)?;
                accumulate(grads, *b, bt.shape(), db)?;
            }
            Op::MaxPool { x, argmax } => {
                let xt = self.value(*x);
                let s = xt.shape();
                let (k, c) = (s[s.len() - 2], s[s.len() - 1]);
                let mut dx = vec![0.0; xt.len()];
                for (slot, (&am, &g)) in argmax.iter().zip(dy.data()).enumerate() {
                    let (gi, j) = (slot / c, slot % c);
                    dx[gi * k * c + am as usize * c + j] += g;
                }
                accumulate(grads, *x, s, dx)?;
            }
            Op::Concat(parts) => {
                let total = dy.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let s = self.shape(p).to_vec();
                    let w = s[s.len() - 1];
                    let mut dp = Vec::with_capacity(dy.rows() * w);
                    for row in dy.data().chunks(total) {
                        dp.extend_from_slice(&row[offset..offset + w]);
                    }
                    accumulate(grads, p, &s, dp)?;
                    offset += w;
                }
            }
            Op::Gather { src, index } => {
                let st = self.value(*src);
                let c = st.last_dim();
                let mut dsrc = vec![0.0; st.len()];
                for (row, &i) in dy.data().chunks(c).zip(index) {
                    add_assign(&mut dsrc[i * c..(i + 1) * c], row);
                }
                accumulate(grads, *src, st.shape(), dsrc)?;
            }
            Op::Reshape(x) => {
                let s = self.shape(*x).to_vec();
                accumulate(grads, *x, &s, dy.data().to_vec())?;
            }
            Op::SwapMiddle(x) => {
                let s = dy.shape();
                let dx = swap_middle_data(dy.data(), [s[0], s[1], s[2], s[3]]);
                let xs = self.shape(*x).to_vec();
                accumulate(grads, *x, &xs, dx)?;
            }
            Op::Sum(x) => {
                let s = self.shape(*x).to_vec();
                let n = s.iter().product();
                accumulate(grads, *x, &s, vec![dy.data()[0]; n])?;
            }
            Op::Mean(x) => {
                let s = self.shape(*x).to_vec();
                let n: usize = s.iter().product();
                accumulate(grads, *x, &s, vec![dy.data()[0] / n.max(1) as f32; n])?;
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let s = self.shape(*logits).to_vec();
                let n = s[1];
                let scale = dy.data()[0] / labels.len() as f32;
                let mut dx = probs.clone();
                for (row, &label) in dx.chunks_mut(n).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                accumulate(grads, *logits, &s, dx)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f32>) -> Result<()> {
    match grads[v.0].as_mut() {
        Some(g) => add_assign(g.data_mut(), &data),
        None => grads[v.0] = Some(Tensor::new(shape.to_vec(), data)?),
    }
    Ok(())
}

fn softmax_row(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        let e = (f64::from(*v) - f64::from(max)).exp();
        sum += e;
        *v = e as f32;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v = (f64::from(*v) * inv) as f32);
}

fn swap_middle_data(data: &[f32], [a, b, c, d]: [usize; 4]) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for ia in 0..a {
        for ib in 0..b {
            for ic in 0..c {
                let src = ((ia * b + ib) * c + ic) * d;
                let dst = ((ia * c + ic) * b + ib) * d;
                out[dst..dst + d].copy_from_slice(&data[src..src + d]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_hand_arithmetic() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[1, 2], &[1.0, 2.0]));
        let w = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.input(t(&[2], &[1.0, 1.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 3.0]);
    }

    #[test]
    fn linear_rejects_width_mismatch() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(Tensor::zeros(&[4, 3]));
        let w = g.input(Tensor::zeros(&[2, 5]));
        assert!(g.linear(x, w, None).is_err());
    }

    #[test]
    fn relu_definition() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn branch_signature_tracks_relu_signs_and_argmax() {
        let store = ParamStore::new();
        let signature = |x: &[f32]| {
            let mut g = Graph::new(&store, Mode::Eval).track_branches();
            let v = g.input(t(&[1, 2, 2], x));
            let r = g.relu(v);
            g.max_pool(r).unwrap();
            g.branch_signature()
        };
        let base = signature(&[1.0, -2.0, 3.0, -1.0]);
        assert_eq!(base, signature(&[1.5, -0.5, 2.0, -3.0]));
        assert_ne!(base, signature(&[1.0, 2.0, 3.0, -1.0]));
        assert_ne!(base, signature(&[4.0, -2.0, 3.0, -1.0]));
        assert_eq!(Graph::new(&store, Mode::Eval).branch_signature(), None);
    }

    #[test]
    fn softmax_constant_row_is_uniform_and_rows_sum_to_one() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[2, 4], &[3.0, 3.0, 3.0, 3.0, -50.0, 2.0, 7.5, 0.1]));
        let y = g.softmax(x).unwrap();
        let v = g.value(y).data();
        assert!(v[..4].iter().all(|p| (p - 0.25).abs() < 1e-7));
        for row in v.chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_empty_axis_is_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(Tensor::zeros(&[3, 0]));
        assert!(g.softmax(x).is_err());
    }

    fn batch_norm_store(c: usize) -> (ParamStore, [ParamId; 4]) {
        let mut s = ParamStore::new();
        let ids = [
            s.add("gamma", Tensor::full(&[c], 1.0)),
            s.add("beta", Tensor::zeros(&[c])),
            s.add_buffer("mean", Tensor::zeros(&[c])),
            s.add_buffer("var", Tensor::full(&[c], 1.0)),
        ];
        (s, ids)
    }

    #[test]
    fn batch_norm_training_output_is_standardized() {
        let (store, [gm, bt, rm, rv]) = batch_norm_store(3);
        let mut g = Graph::new(&store, Mode::Train);
        let data: Vec<f32> = (0..60).map(|i| (i as f32 * 1.3).sin() * 5.0 + i as f32 * 0.1).collect();
        let x = g.input(t(&[20, 3], &data));
        let (gv, bv) = (g.param(gm), g.param(bt));
        let y = g.batch_norm(x, gv, bv, rm, rv).unwrap();
        let out = g.value(y).data();
        for j in 0..3 {
            let col: Vec<f64> = out.iter().skip(j).step_by(3).map(|&v| f64::from(v)).collect();
            let mean = col.iter().sum::<f64>() / 20.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
        assert_eq!(g.take_buffer_updates().len(), 2);
    }

    #[test]
    fn batch_norm_training_needs_two_samples() {
        let (store, [gm, bt, rm, rv]) = batch_norm_store(2);
        let mut g = Graph::new(&store, Mode::Train);
        let x = g.input(Tensor::zeros(&[1, 5, 2]));
        let (gv, bv) = (g.param(gm), g.param(bt));
        assert!(g.batch_norm(x, gv, bv, rm, rv).is_err());
    }

    #[test]
    fn batch_norm_eval_uses_running_statistics() {
        let (mut store, [gm, bt, rm, rv]) = batch_norm_store(1);
        store.set(rm, t(&[1], &[2.0])).unwrap();
        store.set(rv, t(&[1], &[4.0])).unwrap();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[1, 1], &[6.0]));
        let (gv, bv) = (g.param(gm), g.param(bt));
        let y = g.batch_norm(x, gv, bv, rm, rv).unwrap();
        assert!((g.value(y).item() - 4.0 / (4.0f32 + BATCHNORM_EPS).sqrt()).abs() < 1e-6);
        assert!(g.take_buffer_updates().is_empty());
    }

    #[test]
    fn gradient_of_linear_sum_is_the_input() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(&[3, 1], &[0.5, -1.0, 2.0]));
        let unused = store.add("unused", t(&[2], &[1.0, 1.0]));
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[1, 3], &[4.0, 5.0, 6.0]));
        let wv = g.param(w);
        let y = g.linear(x, wv, None).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w).unwrap().data(), &[4.0, 5.0, 6.0]);
        assert_eq!(grads.param(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[2], &[1.0, 2.0]));
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(NnError::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn max_pool_singleton_squeezes_and_ties_go_to_first_slot() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[1, 1, 1, 2], &[3.0, -4.0]));
        let y = g.max_pool(x).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2]);
        assert_eq!(g.value(y).data(), &[3.0, -4.0]);

        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[1, 3, 1], &[5.0, 5.0, 1.0]));
        let y = g.max_pool(x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn swap_middle_round_trips() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let data: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let x = g.input(t(&[1, 2, 3, 4], &data));
        let y = g.swap_middle(x).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 2, 4]);
        assert_eq!(&g.value(y).data()[4..8], &data[12..16]);
        let z = g.swap_middle(y).unwrap();
        assert_eq!(g.value(z).data(), &data[..]);
    }

    #[test]
    fn gather_and_concat_route_gradients() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let src = g.input(t(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let picked = g.gather_rows(src, vec![2, 0, 2], &[3, 2]).unwrap();
        assert_eq!(g.value(picked).data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        let other = g.input(Tensor::full(&[3, 1], 9.0));
        let cat = g.concat(&[picked, other]).unwrap();
        assert_eq!(g.value(cat).data()[..3], [4.0, 5.0, 9.0]);
        let loss = g.sum(cat);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(src).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(g.gather_rows(src, vec![3], &[1, 2]).is_err());
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_classes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(Tensor::zeros(&[2, 4]));
        let loss = g.cross_entropy(x, &[1, 3]).unwrap();
        assert!((g.value(loss).item() - 4f32.ln()).abs() < 1e-6);
        assert!(g.cross_entropy(x, &[4, 0]).is_err());
    }

    #[test]
    fn cross_entropy_stays_exact_for_confident_misses_and_propagates_nan() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(t(&[1, 2], &[200.0, 0.0]));
        let loss = g.cross_entropy(x, &[1]).unwrap();
        assert!((g.value(loss).item() - 200.0).abs() < 1e-4);
        let bad = g.input(t(&[1, 2], &[f32::NAN, 0.0]));
        let loss = g.cross_entropy(bad, &[1]).unwrap();
        assert!(g.value(loss).item().is_nan());
    }
}
