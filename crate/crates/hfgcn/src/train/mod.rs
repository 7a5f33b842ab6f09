//! Training loop, evaluation, score fusion, and the synthetic benchmark.

pub mod config;
pub mod dataset;
pub mod loss;
pub mod metrics;
pub mod optimizer;
pub mod schedule;
pub mod scores;
pub mod synth;

pub use config::TrainConfig;
pub use dataset::{Dataset, Sample};
pub use metrics::{EpochRecord, Metrics, MetricsWriter};
pub use optimizer::SgdMomentum;
pub use schedule::lr_at;
pub use scores::{fuse_scores, FusedPredictions, FusionSpace, ScoreTable};
pub use synth::{synth_dataset, SynthSpec};

use crate::autodiff::Session;
use crate::autodiff::kernels;
use crate::error::{Error, Result};
use crate::model::Model;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub top1_curve: Vec<f64>,
    pub epochs_run: usize,
    pub start_epoch: usize,
}

impl TrainReport {
    pub fn final_top1(&self) -> f64 {
        self.top1_curve.last().copied().unwrap_or(0.0)
    }
}

/// Per-epoch shuffle order, a pure function of seed and epoch so resumed
/// runs see the same batches.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    order.shuffle(&mut rng);
    order
}

/// Train in place. Deterministic given the seed at a fixed thread count of
/// one; emits one record per epoch through `on_epoch`. `start_epoch` > 0
/// resumes a run whose optimizer state was already restored.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    optimizer: &mut SgdMomentum,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    if data.num_classes != model.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            data.num_classes, model.config.num_classes
        )));
    }
    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);

    let mut report = TrainReport {
        loss_curve: Vec::new(),
        top1_curve: Vec::new(),
        epochs_run: 0,
        start_epoch,
    };

    for epoch in start_epoch..cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n);
        let mut last_lr = 0.0;

        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (batch, labels) = data.batch(chunk);
            let mut sess = Session::new();
            let x = sess.constant(batch);
            let logits = model.forward(&mut sess, x, true)?;
            let loss_id = sess
                .tape
                .label_smoothing_ce(logits, &labels, cfg.label_smooth)?;
            let loss = sess.tape.value(loss_id).data()[0];
            epoch_loss += loss * chunk.len() as f64;

            // training-pass predictions for the train top-1 curve
            let lt = sess.tape.value(logits);
            let k = lt.shape()[1];
            for (row, &label) in labels.iter().enumerate() {
                let scores = &lt.data()[row * k..(row + 1) * k];
                let pred = scores
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                pairs.push((pred, label));
            }

            model.store.zero_grads();
            sess.backward(loss_id, &mut model.store)?;
            last_lr = lr_at(cfg, epoch, step, steps_per_epoch);
            optimizer.step(&mut model.store, last_lr)?;
            model.store.zero_grads();
        }

        let mean_loss = epoch_loss / n as f64;
        let m = Metrics::from_predictions(&pairs, data.num_classes);
        report.loss_curve.push(mean_loss);
        report.top1_curve.push(m.top1);
        report.epochs_run += 1;
        on_epoch(&EpochRecord {
            epoch,
            split: "train".into(),
            loss: mean_loss,
            top1: m.top1,
            lr: last_lr,
        });

        if cfg.target_top1 > 0.0 && m.top1 >= cfg.target_top1 {
            break;
        }
    }
    Ok(report)
}

/// Evaluate in eval mode (running statistics) and emit softmax scores per
/// sample. Results are positionally assembled, so thread count does not
/// change the output.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    batch_size: usize,
    threads: usize,
) -> Result<(Metrics, ScoreTable)> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(batch_size).collect();

    let eval_chunk = |model: &mut Model, chunk: &[usize]| -> Result<Vec<Vec<f64>>> {
        let (batch, _) = data.batch(chunk);
        let mut sess = Session::new();
        let x = sess.constant(batch);
        let out = model.forward(&mut sess, x, false)?;
        let logits = sess.tape.value(out).clone();
        let probs = kernels::softmax_lastdim(&logits)?;
        let k = probs.shape()[1];
        Ok(chunk
            .iter()
            .enumerate()
            .map(|(row, _)| probs.data()[row * k..(row + 1) * k].to_vec())
            .collect())
    };

    let per_chunk: Vec<Vec<Vec<f64>>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::State(format!("thread pool: {e}")))?;
        pool.install(|| {
            chunks
                .par_iter()
                .map_init(
                    || model.clone(),
                    |m, chunk| eval_chunk(m, chunk),
                )
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        let mut m = model.clone();
        chunks
            .iter()
            .map(|chunk| eval_chunk(&mut m, chunk))
            .collect::<Result<Vec<_>>>()?
    };

    let mut table = ScoreTable {
        num_classes: data.num_classes,
        ids: Vec::with_capacity(data.len()),
        labels: Vec::with_capacity(data.len()),
        scores: Vec::with_capacity(data.len()),
    };
    for (chunk, rows) in chunks.iter().zip(per_chunk) {
        for (&ix, row) in chunk.iter().zip(rows) {
            table.ids.push(data.samples[ix].id.clone());
            table.labels.push(data.samples[ix].label);
            table.scores.push(row);
        }
    }
    let pairs: Vec<(usize, usize)> = table
        .predictions()
        .into_iter()
        .zip(table.labels.iter().copied())
        .collect();
    let metrics = Metrics::from_predictions(&pairs, data.num_classes);
    Ok((metrics, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::SkeletonLayout;
    use crate::modality::Modality;
    use crate::model::ModelConfig;

    fn tiny_setup() -> (Model, Dataset) {
        let layout = SkeletonLayout::ntu25();
        let seqs = synth_dataset(
            &SynthSpec {
                classes: 4,
                per_class: 2,
                frames: 8,
                noise: 0.0,
                seed: 5,
            },
            &layout,
        )
        .unwrap();
        let data = Dataset::from_sequences(&seqs, &layout, 8, Modality::Joint, 4).unwrap();
        let model = Model::new(ModelConfig::tiny(), 11).unwrap();
        (model, data)
    }

    #[test]
    fn two_epochs_are_bit_reproducible() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            warmup_epochs: 1,
            milestones: vec![],
            base_lr: 0.05,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut model, data) = tiny_setup();
            let mut opt = SgdMomentum::new(&model.store, cfg.momentum, cfg.weight_decay);
            let report = train(&mut model, &data, &cfg, &mut opt, 0, |_| {}).unwrap();
            (report.loss_curve.clone(), model.logits(
                &data.batch(&[0, 1]).0,
                false,
            ).unwrap())
        };
        let (la, a) = run();
        let (lb, b) = run();
        assert_eq!(la, lb);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn single_sample_eval_is_zero_or_one() {
        let (mut model, data) = tiny_setup();
        // initialize BN state with one training pass
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            warmup_epochs: 0,
            milestones: vec![],
            base_lr: 0.01,
            ..TrainConfig::default()
        };
        let mut opt = SgdMomentum::new(&model.store, cfg.momentum, cfg.weight_decay);
        train(&mut model, &data, &cfg, &mut opt, 0, |_| {}).unwrap();

        let one = Dataset {
            samples: vec![data.samples[0].clone()],
            num_classes: data.num_classes,
            modality: data.modality,
        };
        let (m, table) = evaluate(&model, &one, 4, 1).unwrap();
        assert!(m.top1 == 0.0 || m.top1 == 1.0);
        assert_eq!(table.len(), 1);
        let sum: f64 = table.scores[0].iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "softmax scores must sum to 1");
    }

    #[test]
    fn eval_is_thread_count_invariant() {
        let (mut model, data) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            warmup_epochs: 0,
            milestones: vec![],
            base_lr: 0.01,
            ..TrainConfig::default()
        };
        let mut opt = SgdMomentum::new(&model.store, cfg.momentum, cfg.weight_decay);
        train(&mut model, &data, &cfg, &mut opt, 0, |_| {}).unwrap();
        let (_, t1) = evaluate(&model, &data, 3, 1).unwrap();
        let (_, t2) = evaluate(&model, &data, 3, 4).unwrap();
        assert_eq!(t1, t2);
    }
}
