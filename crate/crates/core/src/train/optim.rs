use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Hyperparameters of [`AdamW`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

/// Adam with bias correction and decoupled weight decay:
/// `θ ← θ − lr·(m̂ / (√v̂ + ε) + λ·θ)`.
#[derive(Clone, Debug, Default)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let (b1, b2) = cfg.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = &grads[i];
            let theta = params.get_mut(id).data_mut();
            if g.len() != theta.len() {
                return Err(Error::contract(format!(
                    "gradient {i} has {} values for a tensor of {}",
                    g.len(),
                    theta.len()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..theta.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                theta[j] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta[j]);
            }
        }
        Ok(())
    }
}
