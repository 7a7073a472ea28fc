use crate::error::{Error, Result};
use crate::nn::{Ctx, DepthwiseConv, Initializer, Linear};
use crate::tensor::Var;

/// Squeezed token enhancer: fuses the two streams of a window.
///
/// `fused = [rs | rc]` (`M×M×2C`), `z = dwconv3×3(fused)`,
/// `g = sigmoid(fc2(relu(fc1(mean(z)))))`, `cal = fused + z ⊙ g`,
/// `out = xw + proj(cal)`.
#[derive(Clone, Debug)]
pub struct SqueezedTokenEnhancer {
    pub dim: usize,
    pub window: usize,
    pub conv: DepthwiseConv,
    pub gate_fc1: Linear,
    pub gate_fc2: Linear,
    pub proj: Linear,
}

impl SqueezedTokenEnhancer {
    pub(crate) fn new(init: &mut Initializer, name: &str, dim: usize, window: usize, gate_hidden: usize) -> Result<Self> {
        let fused = 2 * dim;
        let mut s = init.scope(name);
        Ok(Self {
            dim,
            window,
            conv: DepthwiseConv::new(&mut s, "conv", fused, 3)?,
            gate_fc1: Linear::new(&mut s, "gate_fc1", fused, gate_hidden, true),
            gate_fc2: Linear::new(&mut s, "gate_fc2", gate_hidden, fused, true),
            // Zero projection: every block starts as an identity on its input.
            proj: Linear::zeroed(&mut s, "proj", fused, dim, true),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, xw: Var, rs: Var, rc: Var) -> Result<Var> {
        let n = self.window * self.window;
        for v in [xw, rs, rc] {
            let shape = ctx.tape.shape(v);
            if shape != [n, self.dim] {
                return Err(Error::shape("ste_fuse", shape, &[n, self.dim]));
            }
        }
        let fused = ctx.tape.concat(&[rs, rc], 1)?;
        let cal = self.calibrate(ctx, fused)?;
        let y = self.proj.forward(ctx, cal)?;
        ctx.tape.add(xw, y)
    }

    /// `fused + dwconv(fused) ⊙ gate` on `N×2C` tokens.
    pub fn calibrate(&self, ctx: &mut Ctx, fused: Var) -> Result<Var> {
        let (m, c2) = (self.window, 2 * self.dim);
        let t = ctx.tape.transpose(fused)?;
        let t = ctx.tape.reshape(t, &[c2, m, m])?;
        let z = self.conv.forward(ctx, t)?;
        let z = ctx.tape.reshape(z, &[c2, m * m])?;
        let z = ctx.tape.transpose(z)?;

        let pooled = ctx.tape.mean_rows(z)?;
        let pooled = ctx.tape.reshape(pooled, &[1, c2])?;
        let g = self.gate_fc1.forward(ctx, pooled)?;
        let g = ctx.tape.relu(g);
        let g = self.gate_fc2.forward(ctx, g)?;
        let g = ctx.tape.sigmoid(g);
        let g = ctx.tape.reshape(g, &[c2])?;

        let gated = ctx.tape.mul_row(z, g)?;
        ctx.tape.add(fused, gated)
    }
}

/// Fusion for single-path variants: `out = xw + proj(r)`.
#[derive(Clone, Debug)]
pub struct SingleStreamFuse {
    pub proj: Linear,
}

impl SingleStreamFuse {
    pub(crate) fn new(init: &mut Initializer, name: &str, dim: usize) -> Self {
        let mut s = init.scope(name);
        Self {
            proj: Linear::zeroed(&mut s, "proj", dim, dim, true),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, xw: Var, r: Var) -> Result<Var> {
        let y = self.proj.forward(ctx, r)?;
        ctx.tape.add(xw, y)
    }
}
