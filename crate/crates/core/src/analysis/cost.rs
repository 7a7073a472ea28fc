use std::fmt;

use serde::Serialize;

use crate::block::{Block, FeedForward, Fusion, PathKind, WindowGrid};
use crate::error::Result;
use crate::model::Model;
use crate::nn::{EncoderLayer, LayerNorm, Linear, MultiHeadAttention};

/// How FLOPs are counted; echoed at the top of every report.
pub const FLOP_CONVENTION: &str = "multiply-add = 2 FLOPs; matmul m×k×n = 2mkn; bias adds counted; \
attention adds 2·T²·D for scores and 2·T²·D for the weighted sum; depthwise k×k on C×H×W = 2·C·H·W·k²; \
elementwise ops (norms, activations, softmax, gating, residual adds, pooling) count once per element; \
layout changes are free";

/// One named row of a report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostItem {
    pub name: String,
    pub count: u64,
}

/// Parameter counts per module and FLOPs per op at a declared input shape.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub input_shape: Vec<usize>,
    pub params: Vec<CostItem>,
    pub flops: Vec<CostItem>,
    pub total_params: u64,
    pub total_flops: u64,
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# FLOP convention: {FLOP_CONVENTION}")?;
        writeln!(f, "# input shape: {:?}", self.input_shape)?;
        writeln!(f, "params")?;
        for item in &self.params {
            writeln!(f, "  {:<40} {:>12}", item.name, item.count)?;
        }
        writeln!(f, "  {:<40} {:>12}", "total", self.total_params)?;
        writeln!(f, "flops")?;
        for item in &self.flops {
            writeln!(f, "  {:<40} {:>12}", item.name, item.count)?;
        }
        write!(f, "  {:<40} {:>12}", "total", self.total_flops)
    }
}

/// `2·t·in·out`, plus `t·out` bias adds.
pub fn linear_flops(tokens: usize, in_dim: usize, out_dim: usize, bias: bool) -> u64 {
    let (t, i, o) = (tokens as u64, in_dim as u64, out_dim as u64);
    2 * t * i * o + if bias { t * o } else { 0 }
}

/// `2·C·H·W·k²`, excluding the bias.
pub fn dwconv_flops(channels: usize, height: usize, width: usize, k: usize) -> u64 {
    2 * (channels * height * width * k * k) as u64
}

/// Score and weighted-sum products of self-attention over `t` tokens of
/// width `d`, summed across heads.
pub fn attention_core_flops(tokens: usize, dim: usize) -> u64 {
    let (t, d) = (tokens as u64, dim as u64);
    2 * t * t * d + 2 * t * t * d
}

/// Grouping key: `embed`, `head`, `merges.{s}`, or `stages.{s}.blocks.{b}`.
fn module_of(name: &str) -> &str {
    let depth = if name.starts_with("stages.") { 4 } else if name.starts_with("merges.") { 2 } else { 1 };
    match name.match_indices('.').nth(depth - 1) {
        Some((i, _)) => &name[..i],
        None => name,
    }
}

/// Exact learnable-scalar count grouped by module, in declaration order.
pub fn count_params(model: &Model) -> CostReport {
    let mut params: Vec<CostItem> = Vec::new();
    for (name, t) in model.params().iter() {
        let module = module_of(name);
        match params.last_mut() {
            Some(last) if last.name == module => last.count += t.numel() as u64,
            _ => params.push(CostItem {
                name: module.to_string(),
                count: t.numel() as u64,
            }),
        }
    }
    CostReport {
        input_shape: model.input_shape().to_vec(),
        total_params: params.iter().map(|p| p.count).sum(),
        params,
        ..CostReport::default()
    }
}

struct Tally {
    items: Vec<CostItem>,
}

impl Tally {
    fn add(&mut self, name: &str, count: u64) {
        match self.items.iter_mut().find(|i| i.name == name) {
            Some(item) => item.count += count,
            None => self.items.push(CostItem {
                name: name.to_string(),
                count,
            }),
        }
    }

    fn linear(&mut self, name: &str, tokens: usize, l: &Linear) {
        self.add(name, linear_flops(tokens, l.in_dim, l.out_dim, l.bias.is_some()));
    }

    fn norm(&mut self, name: &str, tokens: usize, n: &LayerNorm) {
        self.add(name, (tokens * n.dim) as u64);
    }

    fn attention(&mut self, name: &str, tokens: usize, a: &MultiHeadAttention) {
        for l in [&a.q, &a.k, &a.v] {
            self.linear(name, tokens, l);
        }
        self.add(name, attention_core_flops(tokens, a.dim));
        // Score scaling and softmax, per head.
        self.add(name, 2 * (a.heads * tokens * tokens) as u64);
        self.linear(name, tokens, &a.out);
    }

    fn encoder(&mut self, name: &str, tokens: usize, e: &EncoderLayer) {
        let width = e.norm1.dim;
        self.norm(name, tokens, &e.norm1);
        self.attention(name, tokens, &e.attn);
        self.add(name, (tokens * width) as u64);
        self.norm(name, tokens, &e.norm2);
        self.linear(name, tokens, &e.fc1);
        self.add(name, (tokens * e.fc1.out_dim) as u64);
        self.linear(name, tokens, &e.fc2);
        self.add(name, (tokens * width) as u64);
    }

    fn block(&mut self, prefix: &str, b: &Block) {
        let (m, c) = (b.cfg.window, b.cfg.dim);
        let n = m * m;
        let attn = format!("{prefix}.attention");
        for p in &b.paths {
            let tokens = match p.kind {
                PathKind::Spatial => n,
                PathKind::Channel => c,
            };
            self.norm(&attn, tokens, &p.norm);
            for layer in &p.layers {
                self.encoder(&attn, tokens, layer);
            }
        }
        let fuse = format!("{prefix}.fusion");
        match &b.fusion {
            Fusion::Ste(ste) => {
                let c2 = 2 * c;
                self.add(&fuse, dwconv_flops(c2, m, m, ste.conv.k) + (c2 * n) as u64);
                self.add(&fuse, (c2 * n) as u64);
                self.linear(&fuse, 1, &ste.gate_fc1);
                self.add(&fuse, ste.gate_fc1.out_dim as u64);
                self.linear(&fuse, 1, &ste.gate_fc2);
                self.add(&fuse, c2 as u64);
                self.add(&fuse, 2 * (c2 * n) as u64);
                self.linear(&fuse, n, &ste.proj);
            }
            Fusion::Single(s) => self.linear(&fuse, n, &s.proj),
        }
        self.add(&fuse, (n * c) as u64);
        let ffn = format!("{prefix}.ffn");
        match &b.ffn {
            FeedForward::MultiScale(f) => {
                let hid = f.hidden;
                self.linear(&ffn, n, &f.proj_in);
                self.add(&ffn, (n * hid) as u64);
                self.norm(&ffn, n, &f.norm_in);
                for br in &f.branches {
                    self.add(&ffn, dwconv_flops(br.channels, m, m, br.k) + (br.channels * n) as u64);
                }
                self.add(&ffn, (n * hid) as u64);
                self.add(&ffn, (n * hid) as u64);
                self.norm(&ffn, n, &f.norm_out);
                self.linear(&ffn, n, &f.proj_out);
            }
            FeedForward::Mlp(f) => {
                self.linear(&ffn, n, &f.fc1);
                self.add(&ffn, (n * f.fc1.out_dim) as u64);
                self.linear(&ffn, n, &f.fc2);
            }
        }
        self.add(&ffn, (n * c) as u64);
    }
}

/// Analytic FLOPs of one forward pass on the model's input shape.
/// Windows include any zero padding the partition adds.
pub fn count_flops(model: &Model) -> Result<CostReport> {
    let cfg = model.config();
    let mut t = Tally { items: Vec::new() };
    let shapes = cfg.stage_shapes();
    let side = cfg.input_size / cfg.patch_size;
    t.linear("embed", side * side, &model.embed.proj);
    for (s, blocks) in model.stages.iter().enumerate() {
        let (h, w, c) = shapes[s];
        if s > 0 && cfg.merge_between_stages {
            let merge = &model.merges[s - 1];
            let tokens = h * w;
            t.norm(&format!("merges.{}", s - 1), tokens, &merge.norm);
            t.linear(&format!("merges.{}", s - 1), tokens, &merge.reduction);
        }
        let grid = WindowGrid::new(h, w, cfg.stages[s].block.window)?;
        debug_assert_eq!(c, cfg.stages[s].block.dim);
        for (b, block) in blocks.iter().enumerate() {
            let mut per_window = Tally { items: Vec::new() };
            let prefix = format!("stages.{s}.blocks.{b}");
            per_window.block(&prefix, block);
            for item in per_window.items {
                t.add(&item.name, item.count * grid.count() as u64);
            }
        }
    }
    let (h, w, c) = *shapes.last().expect("validated non-empty");
    t.add("head", (h * w * c) as u64);
    t.linear("head", 1, &model.head.fc);
    let mut report = count_params(model);
    report.total_flops = t.items.iter().map(|i| i.count).sum();
    report.flops = t.items;
    Ok(report)
}
