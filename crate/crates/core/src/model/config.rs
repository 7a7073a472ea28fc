use serde::{Deserialize, Serialize};

use crate::block::{BlockConfig, FfnKind, InitScheme, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub depth: usize,
    pub block: BlockConfig,
}

/// Network layout. Stage `k` runs at `embed_dim · 2^k` channels when
/// merging is enabled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Spectral bands of the input.
    pub in_channels: usize,
    /// Side of the square input patch.
    pub input_size: usize,
    /// Side of the non-overlapping pixel groups embedded as one token.
    pub patch_size: usize,
    pub embed_dim: usize,
    pub stages: Vec<StageConfig>,
    pub merge_between_stages: bool,
    pub num_classes: usize,
    pub seed: u64,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy(16, 4)
    }
}

impl ModelConfig {
    /// Two-stage toy network: 8×8 input, per-pixel embedding to 16
    /// channels, depths `[2, 2]`, 4×4 windows, 2 heads.
    pub fn toy(in_channels: usize, num_classes: usize) -> Self {
        let stage = |dim| StageConfig {
            depth: 2,
            block: BlockConfig {
                dim,
                ..BlockConfig::default()
            },
        };
        Self {
            in_channels,
            input_size: 8,
            patch_size: 1,
            embed_dim: 16,
            stages: vec![stage(16), stage(32)],
            merge_between_stages: true,
            num_classes,
            seed: 0,
            init: InitScheme::Standard,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        for s in &mut self.stages {
            s.block.variant = variant;
        }
        self
    }

    pub fn with_ffn(mut self, ffn: FfnKind) -> Self {
        for s in &mut self.stages {
            s.block.ffn_kind = ffn;
        }
        self
    }

    /// `(height, width, channels)` of the map processed by each stage. The
    /// last entry is also the shape of the final feature map.
    pub fn stage_shapes(&self) -> Vec<(usize, usize, usize)> {
        let side = self.input_size / self.patch_size.max(1);
        let mut shape = (side, side, self.embed_dim);
        let mut out = Vec::with_capacity(self.stages.len());
        for i in 0..self.stages.len() {
            if i > 0 && self.merge_between_stages {
                shape = (shape.0.div_ceil(2), shape.1.div_ceil(2), shape.2 * 2);
            }
            out.push(shape);
        }
        out
    }

    /// Checks the dimension ledger: stage widths must follow the merge
    /// doubling rule starting at `embed_dim`.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("input_size", self.input_size),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(Error::config(format!("model {name} must be positive")));
            }
        }
        if !self.input_size.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "input size {} is not divisible by patch size {}",
                self.input_size, self.patch_size
            )));
        }
        if self.stages.is_empty() {
            return Err(Error::config("model needs at least one stage"));
        }
        let shapes = self.stage_shapes();
        for (i, (stage, &(_, _, c))) in self.stages.iter().zip(&shapes).enumerate() {
            if stage.depth == 0 {
                return Err(Error::config(format!("stage {i} depth must be positive")));
            }
            if stage.block.dim != c {
                return Err(Error::config(format!(
                    "stage {i} block dim {} does not match the expected width {c} \
                     (embed_dim {} doubled at each merge)",
                    stage.block.dim, self.embed_dim
                )));
            }
            stage
                .block
                .validate()
                .map_err(|e| Error::config(format!("stage {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn final_dim(&self) -> usize {
        self.stages.last().map_or(self.embed_dim, |s| s.block.dim)
    }
}

/// Ablation switch applied by [`build_variant`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantTag {
    Block(Variant),
    Ffn(FfnKind),
}

impl std::str::FromStr for VariantTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(v) = s.parse::<Variant>() {
            return Ok(VariantTag::Block(v));
        }
        if let Ok(f) = s.parse::<FfnKind>() {
            return Ok(VariantTag::Ffn(f));
        }
        Err(Error::config(format!(
            "unknown variant tag {s:?} (expected a block variant or ms_ffn / standard_mlp)"
        )))
    }
}

/// A derived configuration and its learnable-scalar count.
#[derive(Clone, Debug)]
pub struct VariantBuild {
    pub config: ModelConfig,
    pub param_count: usize,
}

/// Copies `base` with only the tagged field switched in every stage.
pub fn build_variant(base: &ModelConfig, tag: &str) -> Result<VariantBuild> {
    let config = match tag.parse::<VariantTag>()? {
        VariantTag::Block(v) => base.clone().with_variant(v),
        VariantTag::Ffn(f) => base.clone().with_ffn(f),
    };
    let param_count = super::Model::new(&config)?.params().scalar_count();
    Ok(VariantBuild { config, param_count })
}
