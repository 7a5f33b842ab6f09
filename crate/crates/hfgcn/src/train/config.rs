//! Optimizer and schedule hyperparameters.

use crate::error::{Error, Result};
use crate::model::config::parse_num;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub label_smooth: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once the training top-1 reaches this value (0 disables).
    pub target_top1: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            momentum: 0.9,
            weight_decay: 0.0004,
            base_lr: 0.1,
            warmup_epochs: 5,
            milestones: vec![60, 90],
            decay: 0.1,
            label_smooth: 0.1,
            batch_size: 128,
            seed: 1,
            target_top1: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.base_lr <= 0.0 || self.decay <= 0.0 {
            return Err(Error::Config("learning rate and decay must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_smooth) {
            return Err(Error::Config("label smoothing must be in [0,1]".into()));
        }
        if self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum and weight decay must be nonnegative".into()));
        }
        for w in self.milestones.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Config("milestones must be strictly ascending".into()));
            }
        }
        if let Some(&last) = self.milestones.last() {
            if last >= self.epochs {
                return Err(Error::Config(format!(
                    "milestone {last} must be below the epoch count {}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let ms: Vec<String> = self.milestones.iter().map(|m| m.to_string()).collect();
        let mut lines = vec![
            format!("train.base-lr={}", self.base_lr),
            format!("train.batch-size={}", self.batch_size),
            format!("train.decay={}", self.decay),
            format!("train.epochs={}", self.epochs),
            format!("train.label-smooth={}", self.label_smooth),
            format!("train.milestones={}", ms.join(",")),
            format!("train.momentum={}", self.momentum),
            format!("train.seed={}", self.seed),
            format!("train.target-top1={}", self.target_top1),
            format!("train.warmup-epochs={}", self.warmup_epochs),
            format!("train.weight-decay={}", self.weight_decay),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train.epochs" => self.epochs = parse_num(key, value)?,
            "train.momentum" => self.momentum = parse_num(key, value)?,
            "train.weight-decay" => self.weight_decay = parse_num(key, value)?,
            "train.base-lr" => self.base_lr = parse_num(key, value)?,
            "train.warmup-epochs" => self.warmup_epochs = parse_num(key, value)?,
            "train.decay" => self.decay = parse_num(key, value)?,
            "train.label-smooth" => self.label_smooth = parse_num(key, value)?,
            "train.batch-size" => self.batch_size = parse_num(key, value)?,
            "train.seed" => self.seed = parse_num(key, value)?,
            "train.target-top1" => self.target_top1 = parse_num(key, value)?,
            "train.milestones" => {
                self.milestones = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<Vec<_>>>()?;
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_recipe() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 0.0004);
        assert_eq!(cfg.milestones, vec![60, 90]);
        assert_eq!(cfg.label_smooth, 0.1);
    }

    #[test]
    fn milestone_past_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = TrainConfig {
            epochs: 17,
            milestones: vec![5, 11],
            ..TrainConfig::default()
        };
        let mut rebuilt = TrainConfig::default();
        for line in cfg.to_text().lines() {
            let (k, v) = line.split_once('=').unwrap();
            rebuilt.apply_kv(k, v).unwrap();
        }
        assert_eq!(rebuilt.to_text(), cfg.to_text());
    }
}
