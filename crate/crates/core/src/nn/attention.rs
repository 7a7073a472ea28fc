use super::layers::{LayerNorm, Linear};
use super::params::{Ctx, Initializer};
use crate::error::{Error, Result};
use crate::tensor::{Unary, Var};

/// Multi-head self-attention without masking or positional bias.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Initializer, name: &str, dim: usize, heads: usize, zero_out: bool) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "attention dim {dim} is not divisible by {heads} heads"
            )));
        }
        let mut s = init.scope(name);
        let q = Linear::new(&mut s, "q", dim, dim, true);
        let k = Linear::new(&mut s, "k", dim, dim, true);
        let v = Linear::new(&mut s, "v", dim, dim, true);
        let out = if zero_out {
            Linear::zeroed(&mut s, "out", dim, dim, true)
        } else {
            Linear::new(&mut s, "out", dim, dim, true)
        };
        Ok(Self {
            dim,
            heads,
            q,
            k,
            v,
            out,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(&self, ctx: &mut Ctx, tokens: Var) -> Result<Var> {
        self.forward_traced(ctx, tokens).map(|(y, _)| y)
    }

    /// Also returns each head's `T×T` attention weights.
    pub fn forward_traced(&self, ctx: &mut Ctx, tokens: Var) -> Result<(Var, Vec<Var>)> {
        let shape = ctx.tape.shape(tokens);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape("multi_head_attention", shape, &[self.dim]));
        }
        let q = self.q.forward(ctx, tokens)?;
        let k = self.k.forward(ctx, tokens)?;
        let v = self.v.forward(ctx, tokens)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ctx.tape.narrow(q, 1, h * dh, dh)?;
            let kh = ctx.tape.narrow(k, 1, h * dh, dh)?;
            let vh = ctx.tape.narrow(v, 1, h * dh, dh)?;
            let scores = ctx.tape.matmul_bt(qh, kh)?;
            let scores = ctx.tape.scale(scores, scale);
            let attn = ctx.tape.softmax(scores);
            heads.push(ctx.tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            ctx.tape.concat(&heads, 1)?
        };
        Ok((self.out.forward(ctx, merged)?, weights))
    }
}

/// Pre-norm transformer encoder layer:
/// `h = x + attn(norm1(x))`, `y = h + fc2(gelu(fc1(norm2(h))))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl EncoderLayer {
    /// `zero_residual` zeroes the attention output projection and the second
    /// MLP layer, making the layer an identity map.
    pub fn new(
        init: &mut Initializer,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        zero_residual: bool,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let norm1 = LayerNorm::new(&mut s, "norm1", dim);
        let attn = MultiHeadAttention::new(&mut s, "attn", dim, heads, zero_residual)?;
        let norm2 = LayerNorm::new(&mut s, "norm2", dim);
        let fc1 = Linear::new(&mut s, "fc1", dim, hidden, true);
        let fc2 = if zero_residual {
            Linear::zeroed(&mut s, "fc2", hidden, dim, true)
        } else {
            Linear::new(&mut s, "fc2", hidden, dim, true)
        };
        Ok(Self {
            norm1,
            attn,
            norm2,
            fc1,
            fc2,
        })
    }

    pub fn dim(&self) -> usize {
        self.attn.dim
    }

    pub fn forward(&self, ctx: &mut Ctx, tokens: Var) -> Result<Var> {
        self.forward_traced(ctx, tokens).map(|(y, _)| y)
    }

    pub fn forward_traced(&self, ctx: &mut Ctx, tokens: Var) -> Result<(Var, Vec<Var>)> {
        let n1 = self.norm1.forward(ctx, tokens)?;
        let (a, weights) = self.attn.forward_traced(ctx, n1)?;
        let h = ctx.tape.add(tokens, a)?;
        let n2 = self.norm2.forward(ctx, h)?;
        let f = self.fc1.forward(ctx, n2)?;
        let f = ctx.tape.unary(f, Unary::Gelu);
        let f = self.fc2.forward(ctx, f)?;
        Ok((ctx.tape.add(h, f)?, weights))
    }
}
