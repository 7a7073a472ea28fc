use crate::error::{Error, Result};
use crate::nn::{Ctx, EncoderLayer, Initializer, LayerNorm};
use crate::tensor::Var;

/// Which axis of the `N×C` window matrix is treated as the token axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    /// `N` spatial tokens of width `C`.
    Spatial,
    /// `C` channel tokens of width `N`, operating on the transposed window.
    Channel,
}

/// A layer norm followed by a stack of encoder layers, applied to one view
/// of the window.
#[derive(Clone, Debug)]
pub struct TokenPath {
    pub kind: PathKind,
    pub norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
}

impl TokenPath {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        init: &mut Initializer,
        name: &str,
        kind: PathKind,
        dim: usize,
        tokens: usize,
        depth: usize,
        heads: usize,
        mlp_ratio: usize,
        zero_residual: bool,
    ) -> Result<Self> {
        let width = match kind {
            PathKind::Spatial => dim,
            PathKind::Channel => tokens,
        };
        let mut s = init.scope(name);
        let norm = LayerNorm::new(&mut s, "norm", width);
        let layers = (0..depth)
            .map(|i| {
                EncoderLayer::new(
                    &mut s,
                    &format!("layers.{i}"),
                    width,
                    heads,
                    width * mlp_ratio,
                    zero_residual,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind, norm, layers })
    }

    /// Token width seen by the encoder layers.
    pub fn width(&self) -> usize {
        self.norm.dim
    }

    /// Maps an `N×C` window to an `N×C` result.
    pub fn forward(&self, ctx: &mut Ctx, xw: Var) -> Result<Var> {
        self.forward_traced(ctx, xw).map(|(y, _)| y)
    }

    /// Also returns the attention weights of every layer and head.
    pub fn forward_traced(&self, ctx: &mut Ctx, xw: Var) -> Result<(Var, Vec<Var>)> {
        let shape = ctx.tape.shape(xw);
        let expected_width = match self.kind {
            PathKind::Spatial => shape.get(1),
            PathKind::Channel => shape.first(),
        };
        if shape.len() != 2 || expected_width != Some(&self.width()) {
            return Err(Error::shape("token_path", shape, &[self.width()]));
        }
        let mut h = match self.kind {
            PathKind::Spatial => xw,
            PathKind::Channel => ctx.tape.transpose(xw)?,
        };
        h = self.norm.forward(ctx, h)?;
        let mut weights = Vec::new();
        for layer in &self.layers {
            let (next, w) = layer.forward_traced(ctx, h)?;
            h = next;
            weights.extend(w);
        }
        match self.kind {
            PathKind::Spatial => Ok((h, weights)),
            PathKind::Channel => Ok((ctx.tape.transpose(h)?, weights)),
        }
    }
}
