use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unary {
    /// Exact form `x·Φ(x)`.
    Gelu,
    Sigmoid,
    Relu,
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Gelu => kernels::gelu(x),
            Unary::Sigmoid => kernels::sigmoid(x),
            Unary::Relu => x.max(0.0),
        }
    }
}

impl FromStr for Unary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Unary::Gelu),
            "sigmoid" => Ok(Unary::Sigmoid),
            "relu" => Ok(Unary::Relu),
            other => Err(Error::config(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for Unary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unary::Gelu => "gelu",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
        })
    }
}

/// Marks a gathered output element that reads zero instead of a source value.
pub(crate) const PAD: usize = usize::MAX;

enum Op {
    Leaf,
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatmulBt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Gather { src: Var, index: Arc<[usize]> },
    Concat { inputs: Vec<Var>, outer: usize, widths: Vec<usize> },
    Softmax { x: Var, n: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, n: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    DwConv { x: Var, kern: Var, dims: (usize, usize, usize, usize) },
    Unary { x: Var, kind: Unary },
    Sum(Var),
    MeanRows { x: Var, rows: usize, cols: usize },
    CrossEntropy { logits: Var, class: usize, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Eagerly evaluated operation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order and `backward` is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| vec![0.0; value.numel()]);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---- linear algebra ---------------------------------------------------

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        let out = kernels::matmul(self.data(a), self.data(b), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::Matmul { a, b, m, k, n }, &[a, b]))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            (&[m, k], &[n, k2]) if k == k2 => (m, k, n),
            _ => return Err(Error::shape("matmul_bt", sa, sb)),
        };
        let out = kernels::matmul_bt(self.data(a), self.data(b), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatmulBt { a, b, m, k, n }, &[a, b]))
    }

    // ---- elementwise ------------------------------------------------------

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(sa.to_vec(), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    fn zip_row(&self, op: &'static str, x: Var, v: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        let n = *sx.last().expect("non-empty shape");
        if sv.len() != 1 || sv[0] != n {
            return Err(Error::shape(op, sx, sv));
        }
        let vd = self.data(v);
        let out = self
            .data(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(vd).map(|(&a, &b)| f(a, b)))
            .collect();
        Tensor::new(sx.to_vec(), out)
    }

    /// Adds a vector to every last-axis slice (bias broadcast).
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let value = self.zip_row("add_row", x, v, |a, b| a + b)?;
        Ok(self.push(value, Op::AddRow(x, v), &[x, v]))
    }

    /// Multiplies every last-axis slice by a vector (channel gating).
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let value = self.zip_row("mul_row", x, v, |a, b| a * b)?;
        Ok(self.push(value, Op::MulRow(x, v), &[x, v]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v * s).collect())
            .expect("same shape");
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| kind.apply(v)).collect())
            .expect("same shape");
        self.push(value, Op::Unary { x, kind }, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    // ---- layout -----------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `out[i] = src[index[i]]`, or zero where `index[i]` is the padding
    /// marker. Every layout change (transpose, windowing, padding, slicing)
    /// is expressed through this op.
    pub(crate) fn gather(&mut self, src: Var, shape: &[usize], index: Arc<[usize]>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != index.len() {
            return Err(Error::contract(format!(
                "gather: index length {} does not match shape {shape:?}",
                index.len()
            )));
        }
        let sd = self.data(src);
        let mut out = Vec::with_capacity(numel);
        for &i in index.iter() {
            if i == PAD {
                out.push(0.0);
            } else {
                match sd.get(i) {
                    Some(&v) => out.push(v),
                    None => {
                        return Err(Error::contract(format!(
                            "gather: source index {i} out of range for {} elements",
                            sd.len()
                        )))
                    }
                }
            }
        }
        let value = Tensor::new(shape.to_vec(), out)?;
        Ok(self.push(value, Op::Gather { src, index }, &[src]))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let [r, c] = self.value(x).dims2("transpose")?;
        let index: Arc<[usize]> = (0..r * c).map(|i| (i % r) * c + i / r).collect();
        self.gather(x, &[c, r], index)
    }

    /// Reorders axes of a 3-D tensor; `perm[i]` names the source axis of
    /// output axis `i`.
    pub fn permute3(&mut self, x: Var, perm: [usize; 3]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || {
            let mut p = perm;
            p.sort_unstable();
            p != [0, 1, 2]
        } {
            return Err(Error::shape("permute3", &shape, &perm));
        }
        let strides = [shape[1] * shape[2], shape[2], 1];
        let out_shape = [shape[perm[0]], shape[perm[1]], shape[perm[2]]];
        let mut index = Vec::with_capacity(shape.iter().product());
        for i in 0..out_shape[0] {
            for j in 0..out_shape[1] {
                for k in 0..out_shape[2] {
                    index.push(i * strides[perm[0]] + j * strides[perm[1]] + k * strides[perm[2]]);
                }
            }
        }
        self.gather(x, &out_shape, index.into())
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::contract(format!(
                "narrow: range {start}..{} out of bounds for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for a in start..start + len {
                let base = (o * shape[axis] + a) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(x, &out_shape, index.into())
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat: no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!("concat: axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let widths: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.data(v)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            outer,
            widths,
        };
        Ok(self.push(value, op, inputs))
    }

    // ---- normalization and reductions ---------------------------------------

    pub fn softmax(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = *src.shape().last().expect("non-empty shape");
        let value = Tensor::new(src.shape().to_vec(), kernels::softmax_rows(src.data(), n))
            .expect("same shape");
        self.push(value, Op::Softmax { x, n }, &[x])
    }

    /// Normalizes each last-axis slice with population variance (`eps`
    /// inside the square root), then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let n = *sx.last().expect("non-empty shape");
        for p in [gamma, beta] {
            if self.shape(p) != [n] {
                return Err(Error::shape("layer_norm", &sx, self.shape(p)));
            }
        }
        if eps <= 0.0 {
            return Err(Error::config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (g, b) = (self.data(gamma), self.data(beta));
        let xd = self.data(x);
        let rows = xd.len() / n;
        let mut xhat = Vec::with_capacity(xd.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::new(sx, out)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            n,
            xhat,
            inv_std,
        };
        Ok(self.push(value, op, &[x, gamma, beta]))
    }

    /// Per-channel "same" cross-correlation of `x: C×H×W` with `kernels: C×k×k`.
    pub fn dwconv2d(&mut self, x: Var, kern: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kern).to_vec());
        let (c, h, w, k) = match (&sx[..], &sk[..]) {
            (&[c, h, w], &[c2, k1, k2]) if c == c2 && k1 == k2 => (c, h, w, k1),
            _ => return Err(Error::shape("dwconv2d", &sx, &sk)),
        };
        if k % 2 == 0 {
            return Err(Error::config(format!("depthwise kernel size must be odd, got {k}")));
        }
        let out = kernels::dwconv2d(self.data(x), self.data(kern), c, h, w, k);
        let value = Tensor::new(sx, out)?;
        Ok(self.push(value, Op::DwConv { x, kern, dims: (c, h, w, k) }, &[x, kern]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Column means of a matrix: `T×C → C`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let [rows, cols] = self.value(x).dims2("mean_rows")?;
        let mut out = vec![0.0; cols];
        for row in self.data(x).chunks_exact(cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        let value = Tensor::new(vec![cols], out)?;
        Ok(self.push(value, Op::MeanRows { x, rows, cols }, &[x]))
    }

    /// `-log softmax(logits)[class]` over all elements of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var> {
        let z = self.data(logits);
        if class >= z.len() {
            return Err(Error::contract(format!(
                "cross_entropy: class {class} out of range for {} logits",
                z.len()
            )));
        }
        let lse = kernels::log_sum_exp(z);
        let loss = lse - z[class];
        let probs = z.iter().map(|v| (v - lse).exp()).collect();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, class, probs }, &[logits]))
    }

    // ---- reverse sweep ------------------------------------------------------

    /// Accumulates `d loss / d leaf` into every trainable leaf reachable from
    /// `loss`. Calling it again without [`Tape::zero_grad`] adds to the
    /// existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if let Some(buf) = self.nodes[i].grad.as_mut() {
                    buf.iter_mut().zip(&g).for_each(|(b, d)| *b += d);
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let slot = adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(slot);
            }
        };
        let val = |v: Var| nodes[v.0].value.data();

        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            &Op::Matmul { a, b, m, k, n } => {
                acc(a, &mut |d| add_into(d, &kernels::matmul_bt(g, val(b), m, n, k)));
                acc(b, &mut |d| add_into(d, &kernels::matmul_at(val(a), g, m, k, n)));
            }
            &Op::MatmulBt { a, b, m, k, n } => {
                acc(a, &mut |d| add_into(d, &kernels::matmul(g, val(b), m, n, k)));
                acc(b, &mut |d| add_into(d, &kernels::matmul_at(g, val(a), m, n, k)));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            &Op::Mul(a, b) => {
                acc(a, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(val(b)) {
                        *x += y * w;
                    }
                });
                acc(b, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(val(a)) {
                        *x += y * w;
                    }
                });
            }
            &Op::AddRow(x, v) => {
                acc(x, &mut |d| add_into(d, g));
                acc(v, &mut |d| {
                    let n = d.len();
                    for row in g.chunks_exact(n) {
                        add_into(d, row);
                    }
                });
            }
            &Op::MulRow(x, v) => {
                let vd = val(v);
                let n = vd.len();
                acc(x, &mut |d| {
                    for (drow, grow) in d.chunks_exact_mut(n).zip(g.chunks_exact(n)) {
                        for ((dd, gg), vv) in drow.iter_mut().zip(grow).zip(vd) {
                            *dd += gg * vv;
                        }
                    }
                });
                acc(v, &mut |d| {
                    for (xrow, grow) in val(x).chunks_exact(n).zip(g.chunks_exact(n)) {
                        for ((dd, gg), xx) in d.iter_mut().zip(grow).zip(xrow) {
                            *dd += gg * xx;
                        }
                    }
                });
            }
            &Op::Scale(x, s) => acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += s * b)),
            &Op::Reshape(x) => acc(x, &mut |d| add_into(d, g)),
            Op::Gather { src, index } => acc(*src, &mut |d| {
                for (&j, &gg) in index.iter().zip(g) {
                    if j != PAD {
                        d[j] += gg;
                    }
                }
            }),
            Op::Concat { inputs, outer, widths } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    acc(v, &mut |d| {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + w];
                            add_into(&mut d[o * w..(o + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            &Op::Softmax { x, n } => {
                let y = nodes[i].value.data();
                acc(x, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((dd, gg), yy) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dd += yy * (gg - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                n,
                xhat,
                inv_std,
            } => {
                let n = *n;
                let gd = val(*gamma);
                acc(*x, &mut |d| {
                    let nf = n as f64;
                    for (r, (drow, grow)) in d.chunks_exact_mut(n).zip(g.chunks_exact(n)).enumerate() {
                        let hrow = &xhat[r * n..(r + 1) * n];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..n {
                            let dh = grow[j] * gd[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..n {
                            let dh = grow[j] * gd[j];
                            drow[j] += inv / nf * (nf * dh - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                });
                acc(*gamma, &mut |d| {
                    for (grow, hrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for ((dd, gg), hh) in d.iter_mut().zip(grow).zip(hrow) {
                            *dd += gg * hh;
                        }
                    }
                });
                acc(*beta, &mut |d| {
                    for grow in g.chunks_exact(n) {
                        add_into(d, grow);
                    }
                });
            }
            &Op::DwConv { x, kern, dims } => {
                let (dx, dk) = kernels::dwconv2d_backward(val(x), val(kern), g, dims);
                acc(x, &mut |d| add_into(d, &dx));
                acc(kern, &mut |d| add_into(d, &dk));
            }
            &Op::Unary { x, kind } => {
                let xd = val(x);
                let y = nodes[i].value.data();
                acc(x, &mut |d| {
                    for (j, (dd, gg)) in d.iter_mut().zip(g).enumerate() {
                        let local = match kind {
                            Unary::Gelu => kernels::gelu_grad(xd[j]),
                            Unary::Sigmoid => y[j] * (1.0 - y[j]),
                            Unary::Relu => {
                                if xd[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        *dd += gg * local;
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            &Op::MeanRows { x, rows, cols } => acc(x, &mut |d| {
                let scale = 1.0 / rows as f64;
                for drow in d.chunks_exact_mut(cols) {
                    for (dd, gg) in drow.iter_mut().zip(g) {
                        *dd += gg * scale;
                    }
                }
            }),
            Op::CrossEntropy { logits, class, probs } => acc(*logits, &mut |d| {
                for (j, (dd, p)) in d.iter_mut().zip(probs).enumerate() {
                    let target = if j == *class { 1.0 } else { 0.0 };
                    *dd += g[0] * (p - target);
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}
