#![allow(dead_code)]

use dformer_core::nn::{Ctx, Initializer, ParamStore};
use dformer_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds a module into a fresh store.
pub fn build<T>(seed: u64, f: impl FnOnce(&mut Initializer) -> T) -> (T, ParamStore) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let module = {
        let mut init = Initializer::new(&mut store, &mut r);
        f(&mut init)
    };
    (module, store)
}

/// Evaluates `f` on a constant input with constant parameters.
pub fn eval(store: &ParamStore, x: &Tensor, f: impl FnOnce(&mut Ctx, Var) -> Result<Var>) -> Tensor {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store, false);
    let xv = ctx.tape.constant(x.clone());
    let y = f(&mut ctx, xv).unwrap();
    tape.value(y).clone()
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// `Σ w_i y_i` with fixed pseudo-random weights, turning any output into a
/// scalar whose gradient touches every element.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = Tensor::uniform(&shape, 1.0, &mut rng(seed));
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let [r, c] = t.shape()[..] else { panic!("expected a matrix, got {:?}", t.shape()) };
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn from_mat(m: &Mat) -> Tensor {
    Tensor::new(vec![m.len(), m[0].len()], m.concat()).unwrap()
}

pub fn transpose(m: &Mat) -> Mat {
    (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).collect()).collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

/// `x·Wᵀ + b` from a store's `out×in` weight and optional bias.
pub fn linear(x: &Mat, w: &Tensor, b: Option<&Tensor>) -> Mat {
    let wt = transpose(&to_mat(w));
    let mut y = mat_mul(x, &wt);
    if let Some(b) = b {
        for row in &mut y {
            for (v, bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
    }
    y
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + eps).sqrt() * gamma[i] + beta[i])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn uniform_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}
