use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cca::{first_canonical_correlation, Cca};
use crate::data::Patch;
use crate::error::{Error, FormatError, Result};
use crate::exec::Exec;
use crate::io_util::{dim_u32, put_u32, read_file, write_file, ByteReader};
use crate::model::{HookSite, Model};
use crate::nn::Ctx;
use crate::tensor::Tape;

pub const FEATURE_MAGIC: &[u8; 4] = b"FDM1";

/// Descriptive tags stored with a dump.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub hook: String,
    pub variant: String,
    pub seed: u64,
    pub dataset: String,
}

/// Row-aligned spatial-stream (`X_s`, `n×p`) and channel-stream (`X_c`,
/// `n×q`) features, one row per window.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub xs: Vec<f64>,
    pub xc: Vec<f64>,
    pub meta: DumpMeta,
}

impl FeatureDump {
    pub fn cca(&self, ridge: f64) -> Result<Cca> {
        first_canonical_correlation(&self.xs, &self.xc, self.n, self.p, self.q, ridge)
    }

    /// `"FDM1" | u32 n | u32 p | u32 q | f64[n·p] | f64[n·q] | u32 len |
    /// UTF-8 JSON metadata`, little-endian.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(20 + 8 * (self.xs.len() + self.xc.len()) + meta.len());
        out.extend_from_slice(FEATURE_MAGIC);
        put_u32(&mut out, dim_u32("rows", self.n)?);
        put_u32(&mut out, dim_u32("spatial width", self.p)?);
        put_u32(&mut out, dim_u32("channel width", self.q)?);
        for v in self.xs.iter().chain(&self.xc) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, dim_u32("metadata length", meta.len())?);
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(FEATURE_MAGIC)?;
        let n = r.u32()? as usize;
        let p = r.u32()? as usize;
        let q = r.u32()? as usize;
        let xs = r.f64s(n.saturating_mul(p))?;
        let xc = r.f64s(n.saturating_mul(q))?;
        let len = r.u32()? as usize;
        let at = r.offset();
        let raw = r.take(len)?;
        r.finish()?;
        let meta = serde_json::from_slice(raw).map_err(|e| FormatError::InvalidValue {
            offset: at,
            detail: format!("metadata JSON: {e}"),
        })?;
        Ok(Self { n, p, q, xs, xc, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DumpConfig {
    pub site: HookSite,
    /// Patches drawn without replacement; all when `None` or larger than the
    /// pool.
    pub max_samples: Option<usize>,
    pub seed: u64,
    pub dataset: String,
}

/// Default capture point: the last block of the last stage.
pub fn default_site(model: &Model) -> HookSite {
    let stage = model.stages.len() - 1;
    HookSite {
        stage,
        block: model.stages[stage].len() - 1,
    }
}

/// Mean-pooled `(rs, rc)` rows for every window of one patch.
fn pooled_streams(model: &Model, patch: &Patch, site: HookSite) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    model.check_input(&patch.data)?;
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, model.params(), false);
    let x = ctx.tape.constant(patch.data.clone());
    let (_, captured) = model.forward_features_hooked(&mut ctx, x, Some(site))?;
    let mut rows = Vec::with_capacity(captured.len());
    for (rs, rc) in captured {
        let s = ctx.tape.mean_rows(rs)?;
        let c = ctx.tape.mean_rows(rc)?;
        rows.push((ctx.tape.value(s).data().to_vec(), ctx.tape.value(c).data().to_vec()));
    }
    Ok(rows)
}

/// Captures the two streams entering fusion at `cfg.site` over a seeded
/// sample of patches. Rows are ordered by sampled patch, then window.
pub fn dump_features(model: &Model, patches: &[Patch], cfg: &DumpConfig, exec: Exec) -> Result<FeatureDump> {
    let stage = model
        .stages
        .get(cfg.site.stage)
        .ok_or_else(|| Error::Analysis(format!("model has no stage {}", cfg.site.stage)))?;
    let block = stage
        .get(cfg.site.block)
        .ok_or_else(|| Error::Analysis(format!("stage {} has no block {}", cfg.site.stage, cfg.site.block)))?;
    if !block.cfg.variant.has_two_streams() {
        return Err(Error::Analysis(format!(
            "variant {} has a single path; there is no pre-fusion stream pair to dump",
            block.cfg.variant
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chosen: Vec<usize> = (0..patches.len()).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(cfg.max_samples.unwrap_or(patches.len()).min(patches.len()));
    let per_patch = exec.try_map(&chosen, |&i| pooled_streams(model, &patches[i], cfg.site))?;
    let dim = block.cfg.dim;
    let mut dump = FeatureDump {
        n: 0,
        p: dim,
        q: dim,
        xs: Vec::new(),
        xc: Vec::new(),
        meta: DumpMeta {
            hook: format!("stages.{}.blocks.{}.pre_fuse", cfg.site.stage, cfg.site.block),
            variant: block.cfg.variant.name().to_string(),
            seed: cfg.seed,
            dataset: cfg.dataset.clone(),
        },
    };
    for (s, c) in per_patch.into_iter().flatten() {
        dump.xs.extend(s);
        dump.xc.extend(c);
        dump.n += 1;
    }
    Ok(dump)
}
