use super::config::{BlockConfig, FfnKind};
use crate::error::{Error, Result};
use crate::nn::{Ctx, DepthwiseConv, Initializer, LayerNorm, Linear};
use crate::tensor::{Unary, Var};

/// Multi-scale feed-forward network on an `M×M` window.
///
/// `z_in = φ(proj_in(y))`, `z_out = φ(z_in + concat_b dwconv_{k_b}(z_in[b]))`,
/// `out = proj_out(z_out)`, where `φ` is gelu followed by layer norm and the
/// hidden channels are split evenly across the kernel branches.
#[derive(Clone, Debug)]
pub struct MultiScaleFfn {
    pub window: usize,
    pub hidden: usize,
    pub proj_in: Linear,
    pub norm_in: LayerNorm,
    pub branches: Vec<DepthwiseConv>,
    pub norm_out: LayerNorm,
    pub proj_out: Linear,
}

impl MultiScaleFfn {
    pub(crate) fn new(init: &mut Initializer, name: &str, cfg: &BlockConfig, zero_out: bool) -> Result<Self> {
        let widths = cfg.branch_widths()?;
        let hidden = cfg.ffn_hidden();
        let mut s = init.scope(name);
        let proj_in = Linear::new(&mut s, "proj_in", cfg.dim, hidden, true);
        let norm_in = LayerNorm::new(&mut s, "norm_in", hidden);
        let branches = widths
            .iter()
            .zip(&cfg.msffn_kernels)
            .enumerate()
            .map(|(i, (&w, &k))| DepthwiseConv::new(&mut s, &format!("branches.{i}"), w, k))
            .collect::<Result<_>>()?;
        let norm_out = LayerNorm::new(&mut s, "norm_out", hidden);
        let proj_out = if zero_out {
            Linear::zeroed(&mut s, "proj_out", hidden, cfg.dim, true)
        } else {
            Linear::new(&mut s, "proj_out", hidden, cfg.dim, true)
        };
        Ok(Self {
            window: cfg.window,
            hidden,
            proj_in,
            norm_in,
            branches,
            norm_out,
            proj_out,
        })
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.channels).collect()
    }

    fn phi(ctx: &mut Ctx, norm: &LayerNorm, x: Var) -> Result<Var> {
        let a = ctx.tape.unary(x, Unary::Gelu);
        norm.forward(ctx, a)
    }

    /// Hidden-stage output `z_out` (before the outward projection).
    pub fn hidden_forward(&self, ctx: &mut Ctx, yw: Var) -> Result<Var> {
        let (m, hid) = (self.window, self.hidden);
        let n = m * m;
        let shape = ctx.tape.shape(yw);
        if shape.len() != 2 || shape[0] != n {
            return Err(Error::shape("ms_ffn", shape, &[n, self.proj_in.in_dim]));
        }
        let z = self.proj_in.forward(ctx, yw)?;
        let z_in = Self::phi(ctx, &self.norm_in, z)?;

        let maps = ctx.tape.transpose(z_in)?;
        let maps = ctx.tape.reshape(maps, &[hid, m, m])?;
        let mut outs = Vec::with_capacity(self.branches.len());
        let mut start = 0;
        for branch in &self.branches {
            let part = ctx.tape.narrow(maps, 0, start, branch.channels)?;
            outs.push(branch.forward(ctx, part)?);
            start += branch.channels;
        }
        let ms = if outs.len() == 1 {
            outs[0]
        } else {
            ctx.tape.concat(&outs, 0)?
        };
        let ms = ctx.tape.reshape(ms, &[hid, n])?;
        let ms = ctx.tape.transpose(ms)?;
        let sum = ctx.tape.add(z_in, ms)?;
        Self::phi(ctx, &self.norm_out, sum)
    }

    pub fn forward(&self, ctx: &mut Ctx, yw: Var) -> Result<Var> {
        let z_out = self.hidden_forward(ctx, yw)?;
        self.proj_out.forward(ctx, z_out)
    }
}

/// Position-wise `fc2(gelu(fc1(y)))`.
#[derive(Clone, Debug)]
pub struct StandardMlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl StandardMlp {
    pub(crate) fn new(init: &mut Initializer, name: &str, cfg: &BlockConfig, zero_out: bool) -> Self {
        let mut s = init.scope(name);
        let fc1 = Linear::new(&mut s, "fc1", cfg.dim, cfg.ffn_hidden(), true);
        let fc2 = if zero_out {
            Linear::zeroed(&mut s, "fc2", cfg.ffn_hidden(), cfg.dim, true)
        } else {
            Linear::new(&mut s, "fc2", cfg.ffn_hidden(), cfg.dim, true)
        };
        Self { fc1, fc2 }
    }

    pub fn forward(&self, ctx: &mut Ctx, yw: Var) -> Result<Var> {
        let h = self.fc1.forward(ctx, yw)?;
        let h = ctx.tape.unary(h, Unary::Gelu);
        self.fc2.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub enum FeedForward {
    MultiScale(MultiScaleFfn),
    Mlp(StandardMlp),
}

impl FeedForward {
    pub(crate) fn new(init: &mut Initializer, cfg: &BlockConfig, zero_out: bool) -> Result<Self> {
        Ok(match cfg.ffn_kind {
            FfnKind::MsFfn => FeedForward::MultiScale(MultiScaleFfn::new(init, "ffn", cfg, zero_out)?),
            FfnKind::StandardMlp => FeedForward::Mlp(StandardMlp::new(init, "ffn", cfg, zero_out)),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, yw: Var) -> Result<Var> {
        match self {
            FeedForward::MultiScale(f) => f.forward(ctx, yw),
            FeedForward::Mlp(f) => f.forward(ctx, yw),
        }
    }
}
