use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K×K` counts; rows are true classes, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::contract("confusion matrix rows must form a square"));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Records one sample with 0-based class indices.
    pub fn record(&mut self, truth: usize, predicted: usize) {
        assert!(
            truth < self.classes && predicted < self.classes,
            "class index out of range for a {0}×{0} confusion matrix",
            self.classes
        );
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k * self.classes..(k + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|r| self.get(r, k)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

/// Overall accuracy, average per-class recall, and Cohen's kappa.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Classes without true samples, left out of `aa`.
    pub absent_classes: usize,
}

pub fn evaluate_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::contract("metrics need a nonempty confusion matrix"));
    }
    let n = total as f64;
    let k = cm.classes();
    let trace: u64 = (0..k).map(|i| cm.get(i, i)).sum();
    let p_o = trace as f64 / n;

    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for i in 0..k {
        let row = cm.row_sum(i);
        if row > 0 {
            recall_sum += cm.get(i, i) as f64 / row as f64;
            present += 1;
        }
    }
    let aa = recall_sum / present as f64;

    let p_e: f64 = (0..k)
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    // With p_e = 1 both raters put everything in one class; agreement is
    // then perfect exactly when p_o is.
    let kappa = if p_e >= 1.0 {
        if p_o >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(Metrics {
        oa: p_o,
        aa,
        kappa,
        absent_classes: k - present,
    })
}
