//! Slice-level numeric kernels shared by the tape's forward and backward
//! passes.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `c = a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `c = a · bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = a.split_at(a.len() / 4 * 4);
    let (bc, br) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c = aᵀ · b` with `a: m×k`, `b: m×n`; result is `k×n`.
pub(crate) fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let row = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// Kernel-tap range `lo..hi` whose source index `pos + tap - pad` lies
/// inside `0..len`.
fn tap_range(pos: usize, pad: usize, k: usize, len: usize) -> (usize, usize) {
    (pad.saturating_sub(pos), k.min(len + pad - pos))
}

/// Depthwise "same" cross-correlation on `C×H×W` input with `C×k×k` kernels.
pub(crate) fn dwconv2d(x: &[f64], kern: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let xin = &x[ch * h * w..(ch + 1) * h * w];
        let kc = &kern[ch * k * k..(ch + 1) * k * k];
        let o = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let (dy0, dy1) = tap_range(y, pad, k, h);
            for xx in 0..w {
                let (dx0, dx1) = tap_range(xx, pad, k, w);
                let mut acc = 0.0;
                for dy in dy0..dy1 {
                    let src = &xin[(y + dy - pad) * w + xx + dx0 - pad..];
                    let taps = &kc[dy * k + dx0..dy * k + dx1];
                    for (kv, xv) in taps.iter().zip(src) {
                        acc += kv * xv;
                    }
                }
                o[y * w + xx] = acc;
            }
        }
    }
    out
}

/// Gradients of [`dwconv2d`] with respect to input and kernels.
pub(crate) fn dwconv2d_backward(
    x: &[f64],
    kern: &[f64],
    dout: &[f64],
    dims: (usize, usize, usize, usize),
) -> (Vec<f64>, Vec<f64>) {
    let (c, h, w, k) = dims;
    let pad = k / 2;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kern.len()];
    for ch in 0..c {
        let base = ch * h * w;
        let kbase = ch * k * k;
        for y in 0..h {
            let (dy0, dy1) = tap_range(y, pad, k, h);
            for xx in 0..w {
                let g = dout[base + y * w + xx];
                if g == 0.0 {
                    continue;
                }
                let (dx0, dx1) = tap_range(xx, pad, k, w);
                for dy in dy0..dy1 {
                    let si = base + (y + dy - pad) * w + xx + dx0 - pad;
                    let ki = kbase + dy * k + dx0;
                    let n = dx1 - dx0;
                    for t in 0..n {
                        dx[si + t] += kern[ki + t] * g;
                        dk[ki + t] += x[si + t] * g;
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Row-wise softmax over the last axis of length `n`, max-subtracted.
pub(crate) fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            sum += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= sum;
        }
    }
    out
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Standard normal CDF.
pub(crate) fn phi_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn gelu(x: f64) -> f64 {
    x * phi_cdf(x)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    phi_cdf(x) + x * phi_pdf(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
