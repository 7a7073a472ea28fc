use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the two token paths are wired inside a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Spatial and channel paths on the same input.
    Parallel,
    /// Channel path first; the spatial path consumes its output.
    SerialCTST,
    /// Spatial path first; the channel path consumes its output.
    SerialSTCT,
    /// Two independent spatial paths.
    ParallelSTST,
    /// Two independent channel paths.
    ParallelCTCT,
    /// Spatial path only.
    STOnly,
    /// Channel path only.
    CTOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Parallel,
        Variant::SerialCTST,
        Variant::SerialSTCT,
        Variant::ParallelSTST,
        Variant::ParallelCTCT,
        Variant::STOnly,
        Variant::CTOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Parallel => "Parallel",
            Variant::SerialCTST => "SerialCTST",
            Variant::SerialSTCT => "SerialSTCT",
            Variant::ParallelSTST => "ParallelSTST",
            Variant::ParallelCTCT => "ParallelCTCT",
            Variant::STOnly => "STOnly",
            Variant::CTOnly => "CTOnly",
        }
    }

    /// Whether the block exposes two streams ahead of fusion.
    pub fn has_two_streams(self) -> bool {
        !matches!(self, Variant::STOnly | Variant::CTOnly)
    }

    pub fn is_serial(self) -> bool {
        matches!(self, Variant::SerialCTST | Variant::SerialSTCT)
    }

    fn uses_channel_path(self) -> bool {
        !matches!(self, Variant::ParallelSTST | Variant::STOnly)
    }

    fn uses_spatial_path(self) -> bool {
        !matches!(self, Variant::ParallelCTCT | Variant::CTOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown block variant {s:?}")))
    }
}

/// Feed-forward stage applied after fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    /// Projection, multi-branch depthwise convolutions, projection.
    MsFfn,
    /// Position-wise two-layer MLP.
    StandardMlp,
}

impl FfnKind {
    pub fn name(self) -> &'static str {
        match self {
            FfnKind::MsFfn => "ms_ffn",
            FfnKind::StandardMlp => "standard_mlp",
        }
    }
}

impl FromStr for FfnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ms_ffn" => Ok(FfnKind::MsFfn),
            "standard_mlp" => Ok(FfnKind::StandardMlp),
            other => Err(Error::config(format!("unknown ffn kind {other:?}"))),
        }
    }
}

/// Hyperparameters of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    /// Token width `C`.
    pub dim: usize,
    /// Window side `M`; each window holds `N = M·M` tokens.
    pub window: usize,
    pub variant: Variant,
    /// Encoder layers in each spatial-token path.
    pub st_layers: usize,
    /// Encoder layers in each channel-token path.
    pub ct_layers: usize,
    /// Attention heads in every path. Must divide `dim` (spatial paths) and
    /// `window²` (channel paths).
    pub heads: usize,
    /// Hidden width of the encoder MLP as a multiple of its token width.
    pub encoder_mlp_ratio: usize,
    /// Gate bottleneck is `2C / ste_reduction`.
    pub ste_reduction: usize,
    pub msffn_kernels: Vec<usize>,
    /// Feed-forward hidden width is `C · msffn_expand` for both FFN kinds.
    pub msffn_expand: usize,
    pub ffn_kind: FfnKind,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            window: 4,
            variant: Variant::Parallel,
            st_layers: 1,
            ct_layers: 1,
            heads: 2,
            encoder_mlp_ratio: 2,
            ste_reduction: 8,
            msffn_kernels: vec![1, 3, 5, 7],
            msffn_expand: 4,
            ffn_kind: FfnKind::MsFfn,
        }
    }
}

impl BlockConfig {
    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    pub fn ffn_hidden(&self) -> usize {
        self.dim * self.msffn_expand
    }

    pub fn gate_hidden(&self) -> usize {
        (2 * self.dim / self.ste_reduction).max(1)
    }

    /// Channel count of each multi-scale branch; the hidden width is split
    /// evenly.
    pub fn branch_widths(&self) -> Result<Vec<usize>> {
        let hidden = self.ffn_hidden();
        let branches = self.msffn_kernels.len();
        if branches == 0 || !hidden.is_multiple_of(branches) {
            return Err(Error::config(format!(
                "ffn hidden width {hidden} cannot be split evenly across {branches} branches"
            )));
        }
        Ok(vec![hidden / branches; branches])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("window", self.window),
            ("heads", self.heads),
            ("encoder_mlp_ratio", self.encoder_mlp_ratio),
            ("ste_reduction", self.ste_reduction),
            ("msffn_expand", self.msffn_expand),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("block {name} must be positive")));
            }
        }
        if self.variant.uses_spatial_path() {
            if self.st_layers == 0 {
                return Err(Error::config("block st_layers must be positive for this variant"));
            }
            if !self.dim.is_multiple_of(self.heads) {
                return Err(Error::config(format!(
                    "block dim {} is not divisible by {} heads",
                    self.dim, self.heads
                )));
            }
        }
        if self.variant.uses_channel_path() {
            if self.ct_layers == 0 {
                return Err(Error::config("block ct_layers must be positive for this variant"));
            }
            if !self.tokens().is_multiple_of(self.heads) {
                return Err(Error::config(format!(
                    "channel-token width {} (window²) is not divisible by {} heads",
                    self.tokens(),
                    self.heads
                )));
            }
        }
        if self.ffn_kind == FfnKind::MsFfn {
            if let Some(k) = self.msffn_kernels.iter().find(|&&k| k % 2 == 0) {
                return Err(Error::config(format!("multi-scale kernel sizes must be odd, got {k}")));
            }
            self.branch_widths()?;
        }
        Ok(())
    }
}
