//! Loss, AdamW, the deterministic training loop, OA/AA/kappa metrics and
//! the DFCK checkpoint format.

mod checkpoint;
mod metrics;
mod optim;
mod run;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use metrics::{evaluate_metrics, ConfusionMatrix, Metrics};
pub use optim::{AdamConfig, AdamW};
pub use run::{evaluate, train, train_on, EpochLog, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// `−log softmax(logits)[label]` for a 1-based `label` in `1..=K`.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    let k = logits.numel();
    if label == 0 || label > k {
        return Err(Error::contract(format!("label {label} outside 1..={k}")));
    }
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let loss = tape.cross_entropy(x, label - 1)?;
    Ok(tape.value(loss).item())
}
