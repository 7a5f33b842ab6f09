//! Learning-rate schedule: linear per-step warmup from zero, then step
//! decay at the milestones.

use super::config::TrainConfig;

/// Learning rate at a given epoch and step. `steps_per_epoch` gives the
/// warmup ramp per-step granularity.
pub fn lr_at(cfg: &TrainConfig, epoch: usize, step_in_epoch: usize, steps_per_epoch: usize) -> f64 {
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let global_step = epoch * steps_per_epoch + step_in_epoch;
    if warmup_steps > 0 && global_step < warmup_steps {
        return cfg.base_lr * global_step as f64 / warmup_steps as f64;
    }
    let drops = cfg.milestones.iter().filter(|&&m| epoch >= m).count();
    cfg.base_lr * cfg.decay.powi(drops as i32)
}
