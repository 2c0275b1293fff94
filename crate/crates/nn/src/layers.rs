//! Parameterized building blocks. Each layer registers its tensors in a
//! [`ParamStore`] under a name prefix at construction and records its
//! forward pass on a [`Graph`].

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(−√(6/fan_in), √(6/fan_in))`.
    KaimingUniform,
    /// `U(−√(6/(fan_in+fan_out)), √(6/(fan_in+fan_out)))`.
    XavierUniform,
}

fn init_matrix(rows: usize, cols: usize, init: Init, rng: &mut impl Rng) -> Tensor {
    let bound = match init {
        Init::KaimingUniform => (6.0 / rows as f64).sqrt(),
        Init::XavierUniform => (6.0 / (rows + cols) as f64).sqrt(),
    } as f32;
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Affine map over the last axis. The weight is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), init_matrix(fan_in, fan_out, init, rng));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[width], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[width])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[width], 1.0)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.batch_norm(x, gamma, beta, self.running_mean, self.running_var)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[width], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta)
    }
}

/// Dense, batch norm, ReLU, applied pointwise over the last axis.
#[derive(Debug, Clone)]
pub struct SharedMlp {
    pub dense: Dense,
    pub bn: BatchNorm,
}

impl SharedMlp {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            dense: Dense::new(store, &format!("{name}.dense"), fan_in, fan_out, true, Init::KaimingUniform, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), fan_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.dense.forward(g, x)?;
        let h = self.bn.forward(g, h)?;
        Ok(g.relu(h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttentionOptions {
    /// Adds biases to the Q/K/V projections.
    pub bias: bool,
    /// Adds the input back onto the attention output.
    pub residual: bool,
}

/// Single-head `softmax(Q Kᵀ / √C) V` with `Q = x W_q`, `K = x W_k`,
/// `V = x W_v`, over the middle axis of `[G, L, C]`.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub width: usize,
    pub options: AttentionOptions,
}

impl SelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        options: AttentionOptions,
        rng: &mut impl Rng,
    ) -> Self {
        let mut proj = |p: &str| {
            Dense::new(store, &format!("{name}.{p}"), width, width, options.bias, Init::XavierUniform, rng)
        };
        let (q, k, v) = (proj("q"), proj("k"), proj("v"));
        Self { q, k, v, width, options }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(self.forward_with_scores(g, x)?.0)
    }

    /// Output and the `[G, L, L]` attention score matrix.
    pub fn forward_with_scores(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.width {
            return Err(shape_err(
                "self_attention",
                format!("expected [G, L, {}], got {s:?}", self.width),
            ));
        }
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let logits = g.scaled_matmul(q, k, true, 1.0 / (self.width as f32).sqrt())?;
        let scores = g.softmax(logits)?;
        let mut out = g.matmul(scores, v, false)?;
        if self.options.residual {
            out = g.add(out, x)?;
        }
        Ok((out, scores))
    }
}

/// One post-norm transformer encoder block: multi-head attention with a
/// residual and layer norm, then a `C → 4C → C` ReLU feed-forward with a
/// residual and layer norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub heads: usize,
    pub width: usize,
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub out: Dense,
    pub norm1: LayerNorm,
    pub ff1: Dense,
    pub ff2: Dense,
    pub norm2: LayerNorm,
}

impl TransformerEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(shape_err(
                "transformer_encoder",
                format!("width {width} not divisible by {heads} heads"),
            ));
        }
        let mut proj = |p: &str, rng: &mut _| {
            Dense::new(store, &format!("{name}.{p}"), width, width, true, Init::XavierUniform, rng)
        };
        let (q, k, v, out) = (proj("q", rng), proj("k", rng), proj("v", rng), proj("out", rng));
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), width);
        let ff1 = Dense::new(store, &format!("{name}.ff1"), width, 4 * width, true, Init::KaimingUniform, rng);
        let ff2 = Dense::new(store, &format!("{name}.ff2"), 4 * width, width, true, Init::KaimingUniform, rng);
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), width);
        Ok(Self {
            heads,
            width,
            q,
            k,
            v,
            out,
            norm1,
            ff1,
            ff2,
            norm2,
        })
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    fn split_heads(&self, g: &mut Graph, x: Var, b: usize, l: usize) -> Result<Var> {
        let (h, d) = (self.heads, self.head_width());
        let x = g.reshape(x, &[b, l, h, d])?;
        let x = g.swap_middle(x)?;
        g.reshape(x, &[b * h, l, d])
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.width {
            return Err(shape_err(
                "transformer_encoder",
                format!("expected [B, L, {}], got {s:?}", self.width),
            ));
        }
        let (b, l) = (s[0], s[1]);
        let (h, d) = (self.heads, self.head_width());

        let q = self.q.forward(g, x)?;
        let q = self.split_heads(g, q, b, l)?;
        let k = self.k.forward(g, x)?;
        let k = self.split_heads(g, k, b, l)?;
        let v = self.v.forward(g, x)?;
        let v = self.split_heads(g, v, b, l)?;

        let logits = g.scaled_matmul(q, k, true, 1.0 / (d as f32).sqrt())?;
        let scores = g.softmax(logits)?;
        let ctx = g.matmul(scores, v, false)?;
        let ctx = g.reshape(ctx, &[b, h, l, d])?;
        let ctx = g.swap_middle(ctx)?;
        let ctx = g.reshape(ctx, &[b, l, self.width])?;
        let attn = self.out.forward(g, ctx)?;

        let x1 = g.add(x, attn)?;
        let x1 = self.norm1.forward(g, x1)?;
        let ff = self.ff1.forward(g, x1)?;
        let ff = g.relu(ff);
        let ff = self.ff2.forward(g, ff)?;
        let x2 = g.add(x1, ff)?;
        self.norm2.forward(g, x2)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        for d in [&self.q, &self.k, &self.v, &self.out, &self.ff1, &self.ff2] {
            p.extend(d.params());
        }
        for n in [&self.norm1, &self.norm2] {
            p.extend([n.gamma, n.beta]);
        }
        p
    }
}

/// Widths and switches of one RISurConv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RisurConvSpec {
    /// Descriptor columns per neighbor (14 for the standard descriptor).
    pub in_features: usize,
    /// Width of the previous layer's features; 0 for the first layer.
    pub prev_channels: usize,
    /// Width of the embedded descriptor.
    pub embed_channels: usize,
    pub out_channels: usize,
    /// Self-attention over the neighbor axis after embedding.
    pub sa1: bool,
    /// Self-attention over the reference-point axis after pooling.
    pub sa2: bool,
    pub attention: AttentionOptions,
}

/// The RISurConv operator: embed each neighbor's descriptor with a two-layer
/// shared MLP, attend across the K neighbors, concatenate the previous
/// layer's features, fuse with another shared MLP, max-pool over K, and
/// attend across the N reference points.
#[derive(Debug, Clone)]
pub struct RisurConv {
    pub spec: RisurConvSpec,
    pub embed: [SharedMlp; 2],
    pub sa1: Option<SelfAttention>,
    pub fuse: SharedMlp,
    pub sa2: Option<SelfAttention>,
}

impl RisurConv {
    pub fn new(store: &mut ParamStore, name: &str, spec: RisurConvSpec, rng: &mut impl Rng) -> Self {
        let c0 = spec.embed_channels;
        let embed = [
            SharedMlp::new(store, &format!("{name}.embed0"), spec.in_features, c0, rng),
            SharedMlp::new(store, &format!("{name}.embed1"), c0, c0, rng),
        ];
        let sa1 = spec
            .sa1
            .then(|| SelfAttention::new(store, &format!("{name}.sa1"), c0, spec.attention, rng));
        let fuse = SharedMlp::new(store, &format!("{name}.fuse"), c0 + spec.prev_channels, spec.out_channels, rng);
        let sa2 = spec
            .sa2
            .then(|| SelfAttention::new(store, &format!("{name}.sa2"), spec.out_channels, spec.attention, rng));
        Self {
            spec,
            embed,
            sa1,
            fuse,
            sa2,
        }
    }

    /// `descriptors: [B, N, K, in_features]`, `prev: [B, N, K, prev_channels]`
    /// (required exactly when `prev_channels > 0`) → `[B, N, out_channels]`.
    pub fn forward(&self, g: &mut Graph, descriptors: Var, prev: Option<Var>) -> Result<Var> {
        let s = g.shape(descriptors).to_vec();
        if s.len() != 4 || s[3] != self.spec.in_features {
            return Err(shape_err(
                "risurconv",
                format!("descriptors must be [B, N, K, {}], got {s:?}", self.spec.in_features),
            ));
        }
        let (b, n, k) = (s[0], s[1], s[2]);
        match (prev, self.spec.prev_channels) {
            (None, 0) => {}
            (Some(p), c) if c > 0 && g.shape(p) == [b, n, k, c] => {}
            (p, c) => {
                return Err(shape_err(
                    "risurconv",
                    format!(
                        "previous features {:?} for declared width {c} and grid [{b}, {n}, {k}]",
                        p.map(|p| g.shape(p).to_vec())
                    ),
                ))
            }
        }

        let c0 = self.spec.embed_channels;
        let mut h = self.embed[0].forward(g, descriptors)?;
        h = self.embed[1].forward(g, h)?;
        if let Some(sa) = &self.sa1 {
            let flat = g.reshape(h, &[b * n, k, c0])?;
            let att = sa.forward(g, flat)?;
            h = g.reshape(att, &[b, n, k, c0])?;
        }
        if let Some(p) = prev {
            h = g.concat(&[h, p])?;
        }
        h = self.fuse.forward(g, h)?;
        h = g.max_pool(h)?;
        if let Some(sa) = &self.sa2 {
            h = sa.forward(g, h)?;
        }
        Ok(h)
    }
}
