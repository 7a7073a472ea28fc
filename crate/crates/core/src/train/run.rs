use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::metrics::ConfusionMatrix;
use super::optim::{AdamConfig, AdamW};
use crate::data::{Patch, PatchDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io_util::write_file;
use crate::model::{argmax, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Log every `log_every`-th epoch; the last epoch is always logged.
    pub log_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// CSV with `epoch,loss,oa` columns.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            log_every: 1,
            checkpoint_path: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("eps must be positive and weight_decay non-negative"));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::config("batch_size and log_every must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            betas: self.betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One logged epoch: mean training loss and training OA, both measured on
/// the fly during the epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub oa: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,oa\n");
        for e in &self.log {
            writeln!(out, "{},{},{}", e.epoch, e.loss, e.oa).expect("writing to a String");
        }
        out
    }
}

/// Minibatch AdamW on `patches`. Per-sample gradients may be computed in
/// parallel; they are always summed in batch order, so results do not depend
/// on `exec`.
pub fn train_on(model: &mut Model, patches: &[Patch], cfg: &TrainConfig, exec: Exec) -> Result<TrainReport> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let adam = cfg.adam();
    let mut opt = AdamW::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let samples = exec.try_map(batch, |&i| model.loss_and_grads(&patches[i].data, patches[i].class))?;
            let mut grads: Vec<Vec<f64>> = model.params().tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
            let scale = 1.0 / batch.len() as f64;
            for (s, &i) in samples.iter().zip(batch) {
                if !s.loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batch_no,
                        loss: s.loss,
                    });
                }
                loss_sum += s.loss;
                correct += usize::from(argmax(s.logits.data()) == patches[i].class);
                for (acc, g) in grads.iter_mut().zip(&s.grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += scale * v;
                    }
                }
            }
            opt.step(model.params_mut(), &grads, &adam)?;
        }
        if epoch % cfg.log_every == 0 || epoch == cfg.epochs {
            report.log.push(EpochLog {
                epoch,
                loss: loss_sum / patches.len() as f64,
                oa: correct as f64 / patches.len() as f64,
            });
        }
    }
    Ok(report)
}

/// Trains on the dataset's train split, then writes the checkpoint and the
/// CSV log when their paths are configured.
pub fn train(model: &mut Model, dataset: &PatchDataset, cfg: &TrainConfig, exec: Exec) -> Result<TrainReport> {
    if model.config().in_channels != dataset.bands {
        return Err(Error::config(format!(
            "model expects {} bands, dataset has {}",
            model.config().in_channels,
            dataset.bands
        )));
    }
    if model.config().num_classes < dataset.num_classes {
        return Err(Error::config(format!(
            "model has {} outputs, dataset has {} classes",
            model.config().num_classes,
            dataset.num_classes
        )));
    }
    let report = train_on(model, &dataset.train, cfg, exec)?;
    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(model, Some(&dataset.config), path)?;
    }
    if let Some(path) = &cfg.log_path {
        write_file(path, report.to_csv().as_bytes())?;
    }
    Ok(report)
}

/// Confusion matrix of `model` over `patches`.
pub fn evaluate(model: &Model, patches: &[Patch], exec: Exec) -> Result<ConfusionMatrix> {
    let preds = exec.try_map(patches, |p| model.predict(&p.data))?;
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    for (p, pred) in patches.iter().zip(preds) {
        if p.class >= cm.classes() {
            return Err(Error::Data(format!(
                "label {} exceeds the model's {} classes",
                p.class + 1,
                cm.classes()
            )));
        }
        cm.record(p.class, pred);
    }
    Ok(cm)
}
