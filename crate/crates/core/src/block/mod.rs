//! The disentangled window block: a spatial-token path and a channel-token
//! path over the same window, fused by a gated convolutional enhancer and
//! followed by a multi-scale feed-forward network. Ablation wirings (serial,
//! homogeneous, single-path, plain MLP) are selected through
//! [`BlockConfig`].

mod config;
mod ffn;
mod fusion;
mod paths;
mod window;

use serde::{Deserialize, Serialize};

pub use config::{BlockConfig, FfnKind, Variant};
pub use ffn::{FeedForward, MultiScaleFfn, StandardMlp};
pub use fusion::{SingleStreamFuse, SqueezedTokenEnhancer};
pub use paths::{PathKind, TokenPath};
pub use window::{window_partition, window_reverse, WindowGrid};

use crate::error::{Error, Result};
use crate::nn::{Ctx, Initializer};
use crate::tensor::Var;

/// Parameter initialization policy for residual branches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Kaiming-uniform weights; only the fusion projection starts at zero.
    #[default]
    Standard,
    /// Every residual branch output (encoder attention and MLP, fusion, FFN)
    /// starts at zero, so each block is exactly the identity.
    Identity,
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Ste(SqueezedTokenEnhancer),
    Single(SingleStreamFuse),
}

/// Output of [`Block::forward`].
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub tokens: Var,
    /// The two streams entering fusion, `(rs, rc)`; absent for single-path
    /// variants.
    pub streams: Option<(Var, Var)>,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub cfg: BlockConfig,
    /// In evaluation order; see [`Block::forward`] for the wiring.
    pub paths: Vec<TokenPath>,
    pub fusion: Fusion,
    pub ffn: FeedForward,
}

impl Block {
    pub fn new(init: &mut Initializer, name: &str, cfg: &BlockConfig, scheme: InitScheme) -> Result<Self> {
        cfg.validate()?;
        let zero = scheme == InitScheme::Identity;
        let mut s = init.scope(name);
        let mut path = |name: &str, kind: PathKind| {
            let depth = match kind {
                PathKind::Spatial => cfg.st_layers,
                PathKind::Channel => cfg.ct_layers,
            };
            TokenPath::new(
                &mut s,
                name,
                kind,
                cfg.dim,
                cfg.tokens(),
                depth,
                cfg.heads,
                cfg.encoder_mlp_ratio,
                zero,
            )
        };
        use PathKind::{Channel, Spatial};
        let paths = match cfg.variant {
            Variant::Parallel | Variant::SerialSTCT => vec![path("st", Spatial)?, path("ct", Channel)?],
            Variant::SerialCTST => vec![path("ct", Channel)?, path("st", Spatial)?],
            Variant::ParallelSTST => vec![path("st_a", Spatial)?, path("st_b", Spatial)?],
            Variant::ParallelCTCT => vec![path("ct_a", Channel)?, path("ct_b", Channel)?],
            Variant::STOnly => vec![path("st", Spatial)?],
            Variant::CTOnly => vec![path("ct", Channel)?],
        };
        let fusion = if cfg.variant.has_two_streams() {
            Fusion::Ste(SqueezedTokenEnhancer::new(&mut s, "ste", cfg.dim, cfg.window, cfg.gate_hidden())?)
        } else {
            Fusion::Single(SingleStreamFuse::new(&mut s, "fuse", cfg.dim))
        };
        let ffn = FeedForward::new(&mut s, cfg, zero)?;
        Ok(Self {
            cfg: cfg.clone(),
            paths,
            fusion,
            ffn,
        })
    }

    /// Runs the pre-fusion paths and returns `(rs, rc)`, or the single
    /// stream twice for single-path variants.
    pub fn streams(&self, ctx: &mut Ctx, xw: Var) -> Result<(Var, Var)> {
        let p = &self.paths;
        Ok(match self.cfg.variant {
            Variant::Parallel | Variant::ParallelSTST | Variant::ParallelCTCT => {
                (p[0].forward(ctx, xw)?, p[1].forward(ctx, xw)?)
            }
            Variant::SerialCTST => {
                let rc = p[0].forward(ctx, xw)?;
                (p[1].forward(ctx, rc)?, rc)
            }
            Variant::SerialSTCT => {
                let rs = p[0].forward(ctx, xw)?;
                (rs, p[1].forward(ctx, rs)?)
            }
            Variant::STOnly | Variant::CTOnly => {
                let r = p[0].forward(ctx, xw)?;
                (r, r)
            }
        })
    }

    /// Attention plus fusion: `y = xw + fuse(streams)`.
    pub fn attend(&self, ctx: &mut Ctx, xw: Var) -> Result<BlockOutput> {
        let n = self.cfg.tokens();
        let shape = ctx.tape.shape(xw);
        if shape != [n, self.cfg.dim] {
            return Err(Error::shape("block_forward", shape, &[n, self.cfg.dim]));
        }
        let (rs, rc) = self.streams(ctx, xw)?;
        match &self.fusion {
            Fusion::Ste(ste) => Ok(BlockOutput {
                tokens: ste.forward(ctx, xw, rs, rc)?,
                streams: Some((rs, rc)),
            }),
            Fusion::Single(f) => Ok(BlockOutput {
                tokens: f.forward(ctx, xw, rs)?,
                streams: None,
            }),
        }
    }

    /// Full block on one `N×C` window: `y = attend(xw)`, `out = y + ffn(y)`.
    pub fn forward(&self, ctx: &mut Ctx, xw: Var) -> Result<BlockOutput> {
        let attended = self.attend(ctx, xw)?;
        let f = self.ffn.forward(ctx, attended.tokens)?;
        Ok(BlockOutput {
            tokens: ctx.tape.add(attended.tokens, f)?,
            streams: attended.streams,
        })
    }
}
