//! Hierarchical classifier: patch embedding, windowed block stages with
//! patch merging between them, and a pooled linear head.

mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{build_variant, ModelConfig, StageConfig, VariantBuild, VariantTag};

use crate::block::{Block, WindowGrid};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{Ctx, Initializer, LayerNorm, Linear, ParamStore};
use crate::tensor::tape::PAD;
use crate::tensor::{Tape, Tensor, Var};

/// Non-overlapping `p×p` pixel groups of a `C×P×P` input projected to
/// `embed_dim`, producing an `(P/p)×(P/p)×embed_dim` map.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub in_channels: usize,
    pub patch_size: usize,
}

impl PatchEmbed {
    fn new(init: &mut Initializer, in_channels: usize, patch_size: usize, embed_dim: usize) -> Self {
        let fan_in = in_channels * patch_size * patch_size;
        Self {
            proj: Linear::new(init, "embed", fan_in, embed_dim, true),
            in_channels,
            patch_size,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let (c, h, w) = match shape[..] {
            [c, h, w] if c == self.in_channels => (c, h, w),
            _ => return Err(Error::shape("patch_embed", &shape, &[self.in_channels])),
        };
        let p = self.patch_size;
        if h % p != 0 || w % p != 0 {
            return Err(Error::config(format!(
                "input {h}×{w} is not divisible by patch size {p}"
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let mut index = Vec::with_capacity(c * h * w);
        for gy in 0..gh {
            for gx in 0..gw {
                for ch in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            index.push(ch * h * w + (gy * p + dy) * w + gx * p + dx);
                        }
                    }
                }
            }
        }
        let tokens = ctx.tape.gather(x, &[gh * gw, c * p * p], index.into())?;
        let y = self.proj.forward(ctx, tokens)?;
        ctx.tape.reshape(y, &[gh, gw, self.proj.out_dim])
    }
}

/// Concatenates each 2×2 neighborhood (`4C`), normalizes, and projects to
/// `2C`. Odd extents are zero-padded on the bottom/right.
#[derive(Clone, Debug)]
pub struct PatchMerge {
    pub norm: LayerNorm,
    pub reduction: Linear,
    pub dim: usize,
}

impl PatchMerge {
    fn new(init: &mut Initializer, name: &str, dim: usize) -> Self {
        let mut s = init.scope(name);
        Self {
            norm: LayerNorm::new(&mut s, "norm", 4 * dim),
            reduction: Linear::new(&mut s, "reduction", 4 * dim, 2 * dim, false),
            dim,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let (h, w, c) = match shape[..] {
            [h, w, c] if c == self.dim => (h, w, c),
            _ => return Err(Error::shape("patch_merge", &shape, &[self.dim])),
        };
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        // Neighborhood order: (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
        const OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];
        let mut index = Vec::with_capacity(oh * ow * 4 * c);
        for y in 0..oh {
            for xx in 0..ow {
                for (dy, dx) in OFFSETS {
                    let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                    if sy < h && sx < w {
                        let base = (sy * w + sx) * c;
                        index.extend(base..base + c);
                    } else {
                        index.extend(std::iter::repeat_n(PAD, c));
                    }
                }
            }
        }
        let tokens = ctx.tape.gather(x, &[oh * ow, 4 * c], index.into())?;
        let tokens = self.norm.forward(ctx, tokens)?;
        let y = self.reduction.forward(ctx, tokens)?;
        ctx.tape.reshape(y, &[oh, ow, 2 * c])
    }
}

/// Global average pool over the spatial grid followed by a linear layer.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub fc: Linear,
}

impl ClassifierHead {
    pub fn forward(&self, ctx: &mut Ctx, features: Var) -> Result<Var> {
        let pooled = self.pool(ctx, features)?;
        let pooled = ctx.tape.reshape(pooled, &[1, self.fc.in_dim])?;
        let logits = self.fc.forward(ctx, pooled)?;
        ctx.tape.reshape(logits, &[self.fc.out_dim])
    }

    pub fn pool(&self, ctx: &mut Ctx, features: Var) -> Result<Var> {
        let shape = ctx.tape.shape(features).to_vec();
        let (h, w, c) = match shape[..] {
            [h, w, c] if c == self.fc.in_dim => (h, w, c),
            _ => return Err(Error::shape("classify_head", &shape, &[self.fc.in_dim])),
        };
        let flat = ctx.tape.reshape(features, &[h * w, c])?;
        ctx.tape.mean_rows(flat)
    }
}

/// Where to capture the pre-fusion streams during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HookSite {
    pub stage: usize,
    pub block: usize,
}

/// Streams `(rs, rc)` of every window at a [`HookSite`], in window order.
pub type CapturedStreams = Vec<(Var, Var)>;

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    pub embed: PatchEmbed,
    pub stages: Vec<Vec<Block>>,
    pub merges: Vec<PatchMerge>,
    pub head: ClassifierHead,
}

impl Model {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Initializer::new(&mut params, &mut rng);
        let embed = PatchEmbed::new(&mut init, cfg.in_channels, cfg.patch_size, cfg.embed_dim);
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut merges = Vec::new();
        for (s, stage) in cfg.stages.iter().enumerate() {
            if s > 0 && cfg.merge_between_stages {
                let prev = cfg.stages[s - 1].block.dim;
                merges.push(PatchMerge::new(&mut init, &format!("merges.{}", s - 1), prev));
            }
            let blocks = (0..stage.depth)
                .map(|b| Block::new(&mut init, &format!("stages.{s}.blocks.{b}"), &stage.block, cfg.init))
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        let head = ClassifierHead {
            fc: Linear::new(&mut init, "head", cfg.final_dim(), cfg.num_classes, true),
        };
        Ok(Self {
            cfg: cfg.clone(),
            params,
            embed,
            stages,
            merges,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Input shape `[C_in, P, P]`.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size]
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::shape("model input", x.shape(), &self.input_shape()));
        }
        Ok(())
    }

    /// Runs one stage's blocks over the windows of an `H×W×C` map.
    fn run_stage(&self, ctx: &mut Ctx, s: usize, mut x: Var, hook: Option<HookSite>, captured: &mut CapturedStreams) -> Result<Var> {
        let (h, w) = {
            let shape = ctx.tape.shape(x);
            (shape[0], shape[1])
        };
        let grid = WindowGrid::new(h, w, self.cfg.stages[s].block.window)?;
        for (b, block) in self.stages[s].iter().enumerate() {
            let windows = grid.partition(ctx.tape, x)?;
            let want = hook == Some(HookSite { stage: s, block: b });
            let mut outs = Vec::with_capacity(windows.len());
            for xw in windows {
                let out = block.forward(ctx, xw)?;
                if want {
                    let streams = out.streams.ok_or_else(|| {
                        Error::Analysis(format!(
                            "variant {} has no pre-fusion stream pair to capture",
                            block.cfg.variant
                        ))
                    })?;
                    captured.push(streams);
                }
                outs.push(out.tokens);
            }
            x = grid.reverse(ctx.tape, &outs)?;
        }
        Ok(x)
    }

    /// Embedding, stages and merges: `[C_in, P, P] → [h, w, C_final]`.
    pub fn forward_features(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        self.forward_features_hooked(ctx, x, None).map(|(f, _)| f)
    }

    pub fn forward_features_hooked(&self, ctx: &mut Ctx, x: Var, hook: Option<HookSite>) -> Result<(Var, CapturedStreams)> {
        if let Some(site) = hook {
            let depth = self.stages.get(site.stage).map(Vec::len);
            if depth.is_none_or(|d| site.block >= d) {
                return Err(Error::Analysis(format!(
                    "hook site stage {} block {} does not exist",
                    site.stage, site.block
                )));
            }
        }
        let mut captured = Vec::new();
        let mut h = self.embed.forward(ctx, x)?;
        for s in 0..self.stages.len() {
            if s > 0 && self.cfg.merge_between_stages {
                h = self.merges[s - 1].forward(ctx, h)?;
            }
            h = self.run_stage(ctx, s, h, hook, &mut captured)?;
        }
        Ok((h, captured))
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let f = self.forward_features(ctx, x)?;
        self.head.forward(ctx, f)
    }

    /// Inference-only logits for one `[C_in, P, P]` input.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, false);
        let xv = ctx.tape.constant(x.clone());
        let out = self.forward(&mut ctx, xv)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(self.logits(x)?.data()))
    }

    pub fn logits_batch(&self, exec: Exec, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        exec.try_map(inputs, |x| self.logits(x))
    }

    /// Cross-entropy loss, logits and parameter gradients for one sample.
    pub fn loss_and_grads(&self, x: &Tensor, class: usize) -> Result<SampleGrad> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, true);
        let xv = ctx.tape.constant(x.clone());
        let logits = self.forward(&mut ctx, xv)?;
        let loss = ctx.tape.cross_entropy(logits, class)?;
        ctx.tape.backward(loss)?;
        Ok(SampleGrad {
            loss: ctx.tape.value(loss).item(),
            logits: ctx.tape.value(logits).clone(),
            grads: ctx.param_grads(),
        })
    }
}

/// Per-sample result of [`Model::loss_and_grads`].
#[derive(Clone, Debug)]
pub struct SampleGrad {
    pub loss: f64,
    pub logits: Tensor,
    /// One buffer per parameter, in declaration order.
    pub grads: Vec<Vec<f64>>,
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
