use super::layers::{LayerNorm, Linear};
use super::{init, Graph, LayerParams, ParamKind};
use crate::autodiff::Var;
use crate::error::{config_err, dim_err, Result};
use crate::rng::Rng;
use crate::tensor::Scalar;
use serde::{Deserialize, Serialize};

/// Transformer hyper-parameters shared by every encoder block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSpec {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub num_layers: usize,
    /// Dropout on the MLP hidden activations.
    pub dropout_p: f64,
}

impl Default for AttentionSpec {
    fn default() -> Self {
        AttentionSpec { embed_dim: 64, num_heads: 4, mlp_ratio: 2, num_layers: 2, dropout_p: 0.1 }
    }
}

impl AttentionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.mlp_ratio == 0 {
            return Err(config_err!("attention dims must be positive: {self:?}"));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(config_err!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim,
                self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(config_err!("attention dropout {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// Splits `[N,C,H,W]` into non-overlapping `patch×patch` tiles, projects each flattened
/// tile (channel-major) to `embed_dim` and adds a learned positional table `[T, d]`.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub prefix: String,
    pub in_channels: usize,
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    pub embed_dim: usize,
    proj: Linear,
}

impl PatchEmbed {
    pub fn new(prefix: &str, in_channels: usize, patch: usize, height: usize, width: usize, embed_dim: usize) -> Result<Self> {
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            return Err(config_err!(
                "{height}x{width} feature map is not divisible into {patch}x{patch} patches"
            ));
        }
        let proj = Linear::new(format!("{prefix}.proj"), in_channels * patch * patch, embed_dim);
        Ok(PatchEmbed { prefix: prefix.to_string(), in_channels, patch, height, width, embed_dim, proj })
    }

    pub fn num_tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch * self.patch
    }

    pub fn pos_path(&self) -> String {
        format!("{}.pos_embed", self.prefix)
    }

    pub fn proj(&self) -> &Linear {
        &self.proj
    }

    pub fn init<S: Scalar>(&self, params: &mut LayerParams<S>, rng: &mut Rng) -> Result<()> {
        self.proj.init(params, rng)?;
        let pos = init::normal(vec![self.num_tokens(), self.embed_dim], 0.02, rng);
        params.insert(self.pos_path(), pos, ParamKind::Embedding)
    }

    /// `[N,C,H,W]` → `[N,T,C·p·p]` before projection.
    pub fn patches<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(dim_err!("patch embedding expects [N,{},H,W], got {s:?}", self.in_channels));
        }
        if s[2] != self.height || s[3] != self.width {
            return Err(config_err!(
                "patch embedding built for {}x{} input, got {}x{}",
                self.height,
                self.width,
                s[2],
                s[3]
            ));
        }
        let (n, c, p) = (s[0], s[1], self.patch);
        let (gh, gw) = (self.height / p, self.width / p);
        let t = g.tape_mut();
        let tiles = t.reshape(x, vec![n, c, gh, p, gw, p])?;
        let tiles = t.permute(tiles, &[0, 2, 4, 1, 3, 5])?;
        t.reshape(tiles, vec![n, gh * gw, c * p * p])
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let tiles = self.patches(g, x)?;
        let tokens = self.proj.forward(g, tiles)?;
        let pos = g.param(&self.pos_path())?;
        g.tape_mut().add_broadcast(tokens, pos)
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub prefix: String,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, embed_dim: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || embed_dim % num_heads != 0 {
            return Err(config_err!("embed_dim {embed_dim} is not divisible by num_heads {num_heads}"));
        }
        let lin = |n: &str| Linear::new(format!("{prefix}.{n}"), embed_dim, embed_dim);
        Ok(MultiHeadAttention {
            prefix: prefix.to_string(),
            embed_dim,
            num_heads,
            q: lin("q"),
            k: lin("k"),
            v: lin("v"),
            out: lin("out"),
        })
    }

    pub fn init<S: Scalar>(&self, params: &mut LayerParams<S>, rng: &mut Rng) -> Result<()> {
        for l in [&self.q, &self.k, &self.v, &self.out] {
            l.init(params, rng)?;
        }
        Ok(())
    }

    fn split_heads<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, n: usize, t: usize) -> Result<Var> {
        let (h, dh) = (self.num_heads, self.embed_dim / self.num_heads);
        let tp = g.tape_mut();
        let x = tp.reshape(x, vec![n, t, h, dh])?;
        let x = tp.permute(x, &[0, 2, 1, 3])?;
        tp.reshape(x, vec![n * h, t, dh])
    }

    /// Returns the output `[N,T,d]` and the attention weights `[N·h, T, T]`.
    pub fn forward_with_weights<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<(Var, Var)> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.embed_dim {
            return Err(dim_err!("attention expects [N,T,{}], got {s:?}", self.embed_dim));
        }
        let (n, t) = (s[0], s[1]);
        let (h, dh) = (self.num_heads, self.embed_dim / self.num_heads);
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let q = self.split_heads(g, q, n, t)?;
        let k = self.split_heads(g, k, n, t)?;
        let v = self.split_heads(g, v, n, t)?;
        let tp = g.tape_mut();
        let scores = tp.batch_matmul(q, k, true)?;
        let scores = tp.scale(scores, S::from_f64_lossy(1.0 / (dh as f64).sqrt()));
        let weights = tp.softmax(scores, 2)?;
        let ctx = tp.batch_matmul(weights, v, false)?;
        let ctx = tp.reshape(ctx, vec![n, h, t, dh])?;
        let ctx = tp.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tp.reshape(ctx, vec![n, t, self.embed_dim])?;
        let out = self.out.forward(g, ctx)?;
        Ok((out, weights))
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(g, x)?.0)
    }
}

/// Pre-norm encoder block: `x + MHA(LN(x))`, then `+ MLP(LN(·))` with GELU.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub prefix: String,
    pub spec: AttentionSpec,
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(prefix: &str, spec: AttentionSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.embed_dim;
        let hidden = d * spec.mlp_ratio;
        Ok(TransformerBlock {
            prefix: prefix.to_string(),
            spec,
            ln1: LayerNorm::new(format!("{prefix}.ln1"), d),
            attn: MultiHeadAttention::new(&format!("{prefix}.attn"), d, spec.num_heads)?,
            ln2: LayerNorm::new(format!("{prefix}.ln2"), d),
            fc1: Linear::new(format!("{prefix}.mlp.fc1"), d, hidden),
            fc2: Linear::new(format!("{prefix}.mlp.fc2"), hidden, d),
        })
    }

    pub fn init<S: Scalar>(&self, params: &mut LayerParams<S>, rng: &mut Rng) -> Result<()> {
        self.ln1.init(params)?;
        self.attn.init(params, rng)?;
        self.ln2.init(params)?;
        self.fc1.init(params, rng)?;
        self.fc2.init(params, rng)
    }

    /// Parameter prefixes of the two residual branches.
    pub fn branch_prefixes(&self) -> [String; 2] {
        [format!("{}.attn.", self.prefix), format!("{}.mlp.", self.prefix)]
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let h = self.attn.forward(g, h)?;
        let x = g.tape_mut().add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.fc1.forward(g, h)?;
        let h = g.tape_mut().gelu(h);
        let h = g.dropout(h, self.spec.dropout_p)?;
        let h = self.fc2.forward(g, h)?;
        g.tape_mut().add(x, h)
    }
}
