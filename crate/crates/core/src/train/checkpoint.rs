use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::error::{FormatError, Result};
use crate::io_util::{dim_u32, put_u32, read_file, write_file, ByteReader};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON header of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Patch pipeline the model was trained with, when known.
    pub data: Option<DataConfig>,
}

/// Serializes `"DFCK" | u32 version | u32 len | JSON meta | u32 count |
/// count × (u32 ndim | u32 dims… | f64 values…)`, little-endian, tensors in
/// declaration order.
pub fn encode_checkpoint(model: &Model, data: Option<&DataConfig>) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        model: model.config().clone(),
        data: data.cloned(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params().scalar_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, dim_u32("config length", json.len())?);
    out.extend_from_slice(&json);
    let tensors = model.params().tensors();
    put_u32(&mut out, dim_u32("tensor count", tensors.len())?);
    for t in tensors {
        put_u32(&mut out, dim_u32("rank", t.ndim())?);
        for &d in t.shape() {
            put_u32(&mut out, dim_u32("extent", d)?);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Rebuilds the model from the embedded config and overwrites its
/// parameters, checking each stored shape against the config.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            offset: at,
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let len = r.u32()? as usize;
    let at = r.offset();
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?).map_err(|e| FormatError::InvalidValue {
        offset: at,
        detail: format!("config JSON: {e}"),
    })?;
    let mut model = Model::new(&meta.model)?;
    let expected: Vec<Vec<usize>> = model.params().tensors().iter().map(|t| t.shape().to_vec()).collect();
    let at = r.offset();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(FormatError::ShapeMismatch {
            offset: at,
            detail: format!("{count} tensors stored, config declares {}", expected.len()),
        }
        .into());
    }
    let mut tensors = Vec::with_capacity(count);
    for (i, want) in expected.iter().enumerate() {
        let at = r.offset();
        let rank = r.u32()? as usize;
        r.ensure(rank, 4)?;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if &shape != want {
            return Err(FormatError::ShapeMismatch {
                offset: at,
                detail: format!(
                    "tensor {i} ({}) stored as {shape:?}, config expects {want:?}",
                    model.params().iter().nth(i).map_or("", |(n, _)| n)
                ),
            }
            .into());
        }
        let values = r.f64s(want.iter().product())?;
        tensors.push(Tensor::new(want.clone(), values)?);
    }
    r.finish()?;
    model.params_mut().replace_all(tensors)?;
    Ok((model, meta))
}

pub fn save_checkpoint(model: &Model, data: Option<&DataConfig>, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(model, data)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    decode_checkpoint(&read_file(path)?)
}
