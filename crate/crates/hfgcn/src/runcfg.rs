//! Run configuration: architecture, trainer, and data source merged from a
//! plain-text key=value file plus overrides. Unknown keys are rejected, and
//! the fully resolved config can be re-serialized byte-for-byte so a run's
//! echo replays exactly.

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::model::config::parse_num;
use crate::model::ModelConfig;
use crate::train::{SynthSpec, TrainConfig};
use std::path::PathBuf;

/// Where samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Container,
    Synth,
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Container => write!(f, "container"),
            DataSource::Synth => write!(f, "synth"),
        }
    }
}

impl std::str::FromStr for DataSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "container" => Ok(DataSource::Container),
            "synth" => Ok(DataSource::Synth),
            other => Err(Error::Config(format!(
                "unknown data source '{other}' (expected container|synth)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub modality: Modality,
    pub synth: SynthSpec,
    /// Held-out samples per class appended after the training samples
    /// (synthetic source only).
    pub synth_test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            path: None,
            modality: Modality::Joint,
            synth: SynthSpec {
                classes: 8,
                per_class: 8,
                frames: 32,
                noise: 0.0,
                seed: 7,
            },
            synth_test_per_class: 0,
        }
    }
}

/// Everything one command run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::full(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Apply one key=value pair. Keys are namespaced: `model.*`, `train.*`,
    /// `data.*`, `synth.*`, `out.*`.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        if key.starts_with("model.") {
            return self.model.apply_kv(key, value);
        }
        if key.starts_with("train.") {
            return self.train.apply_kv(key, value);
        }
        match key {
            "data.source" => self.data.source = value.parse()?,
            "data.path" => {
                self.data.path = if value.trim().is_empty() {
                    None
                } else {
                    Some(value.trim().into())
                }
            }
            "data.modality" => self.data.modality = value.parse()?,
            "synth.classes" => self.data.synth.classes = parse_num(key, value)?,
            "synth.train-per-class" => self.data.synth.per_class = parse_num(key, value)?,
            "synth.test-per-class" => self.data.synth_test_per_class = parse_num(key, value)?,
            "synth.frames" => self.data.synth.frames = parse_num(key, value)?,
            "synth.noise" => self.data.synth.noise = parse_num(key, value)?,
            "synth.seed" => self.data.synth.seed = parse_num(key, value)?,
            "out.dir" => self.out_dir = value.trim().into(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a config file body: `key=value` lines, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            self.apply_kv(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Parse { line: i + 1, msg },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Fully resolved config text; feeding it back through
    /// [`RunConfig::apply_text`] reproduces this config exactly.
    pub fn to_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        lines.extend(self.model.to_text().lines().map(String::from));
        lines.extend(self.train.to_text().lines().map(String::from));
        lines.push(format!("data.modality={}", self.data.modality));
        if let Some(p) = &self.data.path {
            lines.push(format!("data.path={}", p.display()));
        }
        lines.push(format!("data.source={}", self.data.source));
        lines.push(format!("out.dir={}", self.out_dir.display()));
        lines.push(format!("synth.classes={}", self.data.synth.classes));
        lines.push(format!("synth.frames={}", self.data.synth.frames));
        lines.push(format!("synth.noise={}", self.data.synth.noise));
        lines.push(format!("synth.seed={}", self.data.synth.seed));
        lines.push(format!("synth.test-per-class={}", self.data.synth_test_per_class));
        lines.push(format!("synth.train-per-class={}", self.data.synth.per_class));
        lines.sort();
        lines.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.source == DataSource::Container && self.data.path.is_none() {
            return Err(Error::Config("data.source=container requires data.path".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_replays_byte_for_byte() {
        let mut cfg = RunConfig::default();
        cfg.apply_kv("model.classes", "17").unwrap();
        cfg.apply_kv("train.epochs", "42").unwrap();
        cfg.apply_kv("train.milestones", "10,20").unwrap();
        cfg.apply_kv("synth.noise", "0.05").unwrap();
        let text = cfg.to_text();

        let mut replayed = RunConfig::default();
        replayed.apply_text(&text).unwrap();
        assert_eq!(replayed.to_text(), text);
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# a comment\n\nmodel.classes=9 # trailing\n").unwrap();
        assert_eq!(cfg.model.num_classes, 9);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let mut cfg = RunConfig::default();
        match cfg.apply_text("model.classes=4\nnope=1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn container_source_needs_path() {
        let mut cfg = RunConfig::default();
        cfg.apply_kv("data.source", "container").unwrap();
        assert!(cfg.validate().is_err());
        cfg.apply_kv("data.path", "x.hfg").unwrap();
        cfg.validate().unwrap();
    }
}
