use std::sync::Arc;

use super::params::{Ctx, Initializer, ParamId};
use crate::error::{Error, Result};
use crate::tensor::Var;

/// `y = x·Wᵀ + b` over token rows. `weight` is `out×in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(init: &mut Initializer, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let mut s = init.scope(name);
        let weight = s.kaiming_uniform("weight", &[out_dim, in_dim], in_dim);
        let bias = bias.then(|| s.constant("bias", &[out_dim], 0.0));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Same layout as [`Linear::new`] with an all-zero weight.
    pub fn zeroed(init: &mut Initializer, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let mut s = init.scope(name);
        let weight = s.constant("weight", &[out_dim, in_dim], 0.0);
        let bias = bias.then(|| s.constant("bias", &[out_dim], 0.0));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x);
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::shape("linear", shape, &[self.out_dim, self.in_dim]));
        }
        let y = ctx.tape.matmul_bt(x, ctx.p(self.weight))?;
        match self.bias {
            Some(b) => ctx.tape.add_row(y, ctx.p(b)),
            None => Ok(y),
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

/// Per-token normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(init: &mut Initializer, name: &str, dim: usize) -> Self {
        let mut s = init.scope(name);
        Self {
            gamma: s.constant("gamma", &[dim], 1.0),
            beta: s.constant("beta", &[dim], 0.0),
            dim,
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        ctx.tape.layer_norm(x, g, b, self.eps)
    }
}

/// Depthwise `k×k` convolution with per-channel bias on `C×H×W` maps.
#[derive(Clone, Debug)]
pub struct DepthwiseConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub k: usize,
}

impl DepthwiseConv {
    pub fn new(init: &mut Initializer, name: &str, channels: usize, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::config(format!("depthwise kernel size must be odd, got {k}")));
        }
        let mut s = init.scope(name);
        Ok(Self {
            kernel: s.kaiming_uniform("kernel", &[channels, k, k], k * k),
            bias: s.constant("bias", &[channels], 0.0),
            channels,
            k,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = ctx.tape.dwconv2d(x, ctx.p(self.kernel))?;
        let shape = ctx.tape.shape(y).to_vec();
        let plane = shape[1] * shape[2];
        let index: Arc<[usize]> = (0..shape[0] * plane).map(|i| i / plane).collect();
        let bias = ctx.tape.gather(ctx.p(self.bias), &shape, index)?;
        ctx.tape.add(y, bias)
    }
}
