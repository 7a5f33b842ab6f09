//! Accuracy metrics and line-oriented JSON epoch records.

use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub top1: f64,
    pub per_class: Vec<f64>,
    pub loss_curve: Vec<f64>,
}

impl Metrics {
    /// Top-1 and per-class accuracy from (prediction, label) pairs.
    pub fn from_predictions(pairs: &[(usize, usize)], num_classes: usize) -> Metrics {
        let mut correct = vec![0usize; num_classes];
        let mut total = vec![0usize; num_classes];
        let mut hits = 0usize;
        for &(pred, label) in pairs {
            total[label] += 1;
            if pred == label {
                correct[label] += 1;
                hits += 1;
            }
        }
        let per_class = correct
            .iter()
            .zip(&total)
            .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
            .collect();
        Metrics {
            top1: if pairs.is_empty() {
                0.0
            } else {
                hits as f64 / pairs.len() as f64
            },
            per_class,
            loss_curve: Vec::new(),
        }
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub top1: f64,
    pub lr: f64,
}

/// Writes epoch records as JSON lines.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        MetricsWriter { out }
    }

    pub fn write(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| crate::error::Error::Format(format!("metrics record: {e}")))?;
        writeln!(self.out, "{line}")?;
        Ok(())
    }
}
