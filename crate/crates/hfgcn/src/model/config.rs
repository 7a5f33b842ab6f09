//! Architecture configuration: block table, topology selection, widths.

use crate::error::{Error, Result};
use crate::layout::HypergraphName;
use std::fmt;
use std::str::FromStr;

/// Which spatial unit the blocks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Hypergraph attention + hypergraph convolution blocks.
    Hfgcn,
    /// Fixed-adjacency subset convolutions (the ablation reference point).
    Baseline,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Hfgcn => write!(f, "hfgcn"),
            ModelKind::Baseline => write!(f, "baseline"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hfgcn" => Ok(ModelKind::Hfgcn),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Attention map construction: one map per hypergraph branch, or the summed
/// form where all branches share a single map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamMode {
    PerBranch,
    Summed,
}

impl fmt::Display for HamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HamMode::PerBranch => write!(f, "per-branch"),
            HamMode::Summed => write!(f, "summed"),
        }
    }
}

impl FromStr for HamMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-branch" => Ok(HamMode::PerBranch),
            "summed" => Ok(HamMode::Summed),
            other => Err(Error::Config(format!(
                "unknown attention mode '{other}' (expected per-branch|summed)"
            ))),
        }
    }
}

/// Input of the xi transform in the hypergraph-difference branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiInput {
    /// Time-averaged hypergraph feature (default).
    Hypergraph,
    /// The time-averaged plain feature, making the branch a pure
    /// channel-difference map.
    Feature,
}

impl fmt::Display for XiInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XiInput::Hypergraph => write!(f, "hx"),
            XiInput::Feature => write!(f, "x"),
        }
    }
}

impl FromStr for XiInput {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hx" => Ok(XiInput::Hypergraph),
            "x" => Ok(XiInput::Feature),
            other => Err(Error::Config(format!(
                "unknown xi input '{other}' (expected hx|x)"
            ))),
        }
    }
}

/// One backbone block: channel widths and temporal stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.c_in, self.c_out, self.stride)
    }
}

impl FromStr for BlockSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "block spec '{s}' must be c_in:c_out:stride"
            )));
        }
        let parse = |p: &str| -> Result<usize> {
            p.parse()
                .map_err(|_| Error::Config(format!("invalid block field '{p}'")))
        };
        Ok(BlockSpec {
            c_in: parse(parts[0])?,
            c_out: parse(parts[1])?,
            stride: parse(parts[2])?,
        })
    }
}

/// Full architecture description.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub num_joints: usize,
    pub window: usize,
    pub max_persons: usize,
    pub num_classes: usize,
    pub hypergraphs: Vec<HypergraphName>,
    pub reduction: usize,
    pub ham_mode: HamMode,
    pub xi_input: XiInput,
    pub blocks: Vec<BlockSpec>,
    pub layout: String,
    pub partition_dir: Option<std::path::PathBuf>,
}

/// The 10-block backbone: four 64-wide, three 128-wide, three 256-wide
/// stages with temporal stride 2 entering the wider stages.
pub fn backbone_blocks() -> Vec<BlockSpec> {
    let table = [
        (3, 64, 1),
        (64, 64, 1),
        (64, 64, 1),
        (64, 64, 1),
        (64, 128, 2),
        (128, 128, 1),
        (128, 128, 1),
        (128, 256, 2),
        (256, 256, 1),
        (256, 256, 1),
    ];
    table
        .iter()
        .map(|&(c_in, c_out, stride)| BlockSpec { c_in, c_out, stride })
        .collect()
}

impl ModelConfig {
    /// The full three-hypergraph model at benchmark scale.
    pub fn full() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Hfgcn,
            num_joints: 25,
            window: 64,
            max_persons: 2,
            num_classes: 120,
            hypergraphs: HypergraphName::ALL.to_vec(),
            reduction: 8,
            ham_mode: HamMode::PerBranch,
            xi_input: XiInput::Hypergraph,
            blocks: backbone_blocks(),
            layout: "ntu25".into(),
            partition_dir: None,
        }
    }

    /// The fixed-adjacency reference model on the same backbone.
    pub fn baseline() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Baseline,
            ..ModelConfig::full()
        }
    }

    /// Tiny configuration for gradient checking (base width 8, two blocks).
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Hfgcn,
            num_joints: 25,
            window: 8,
            max_persons: 1,
            num_classes: 4,
            hypergraphs: HypergraphName::ALL.to_vec(),
            reduction: 8,
            ham_mode: HamMode::PerBranch,
            xi_input: XiInput::Hypergraph,
            blocks: vec![
                BlockSpec { c_in: 3, c_out: 8, stride: 1 },
                BlockSpec { c_in: 8, c_out: 8, stride: 1 },
            ],
            layout: "ntu25".into(),
            partition_dir: None,
        }
    }

    /// Reduced configuration for desk-scale end-to-end training
    /// (4 blocks, base width 32).
    pub fn reduced() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Hfgcn,
            num_joints: 25,
            window: 32,
            max_persons: 1,
            num_classes: 8,
            hypergraphs: HypergraphName::ALL.to_vec(),
            reduction: 8,
            ham_mode: HamMode::PerBranch,
            xi_input: XiInput::Hypergraph,
            blocks: vec![
                BlockSpec { c_in: 3, c_out: 32, stride: 1 },
                BlockSpec { c_in: 32, c_out: 32, stride: 1 },
                BlockSpec { c_in: 32, c_out: 64, stride: 2 },
                BlockSpec { c_in: 64, c_out: 64, stride: 1 },
            ],
            layout: "ntu25".into(),
            partition_dir: None,
        }
    }

    pub fn preset(name: &str) -> Result<ModelConfig> {
        match name {
            "full" => Ok(ModelConfig::full()),
            "baseline" => Ok(ModelConfig::baseline()),
            "tiny" => Ok(ModelConfig::tiny()),
            "reduced" => Ok(ModelConfig::reduced()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected full|baseline|tiny|reduced)"
            ))),
        }
    }

    /// Embedding width for a block input: `c_in / reduction`, with the raw
    /// 3-channel input block mapped to width 8.
    pub fn embed_width(&self, c_in: usize) -> usize {
        if c_in < self.reduction {
            8
        } else {
            c_in / self.reduction
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.num_joints == 0 || self.max_persons == 0 {
            return Err(Error::Config("joint and person counts must be positive".into()));
        }
        if self.window < 2 {
            return Err(Error::Config("window must be at least 2 frames".into()));
        }
        if self.reduction == 0 {
            return Err(Error::Config("reduction ratio must be positive".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("block table is empty".into()));
        }
        if self.blocks[0].c_in != 3 {
            return Err(Error::Config(format!(
                "first block must take the 3 coordinate channels, got {}",
                self.blocks[0].c_in
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.stride != 1 && b.stride != 2 {
                return Err(Error::Config(format!(
                    "block {i} stride must be 1 or 2, got {}",
                    b.stride
                )));
            }
            if b.c_in == 0 || b.c_out == 0 {
                return Err(Error::Config(format!("block {i} has zero width")));
            }
            if i > 0 && self.blocks[i - 1].c_out != b.c_in {
                return Err(Error::Config(format!(
                    "block {i} input width {} does not chain from previous output {}",
                    b.c_in,
                    self.blocks[i - 1].c_out
                )));
            }
            if b.c_in >= self.reduction && b.c_in % self.reduction != 0 {
                return Err(Error::Config(format!(
                    "reduction {} must divide block {i} input width {}",
                    self.reduction, b.c_in
                )));
            }
        }
        let mut seen = Vec::new();
        for h in &self.hypergraphs {
            if seen.contains(h) {
                return Err(Error::Config(format!("hypergraph {h} listed twice")));
            }
            seen.push(*h);
        }
        if self.kind == ModelKind::Hfgcn && self.hypergraphs.is_empty() {
            return Err(Error::Config("enable at least one hypergraph".into()));
        }
        Ok(())
    }

    /// Key=value lines (sorted) capturing the full architecture; the inverse
    /// of [`ModelConfig::apply_kv`] over [`ModelConfig::full`] defaults.
    pub fn to_text(&self) -> String {
        let hs: Vec<String> = self.hypergraphs.iter().map(|h| h.to_string()).collect();
        let blocks: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        let mut lines = vec![
            format!("model.blocks={}", blocks.join(",")),
            format!("model.classes={}", self.num_classes),
            format!("model.ham-mode={}", self.ham_mode),
            format!("model.hypergraphs={}", hs.join(",")),
            format!("model.joints={}", self.num_joints),
            format!("model.kind={}", self.kind),
            format!("model.layout={}", self.layout),
            format!("model.persons={}", self.max_persons),
            format!("model.reduction={}", self.reduction),
            format!("model.window={}", self.window),
            format!("model.xi-input={}", self.xi_input),
        ];
        if let Some(dir) = &self.partition_dir {
            lines.push(format!("model.partition-dir={}", dir.display()));
        }
        lines.sort();
        lines.join("\n") + "\n"
    }

    /// Apply one `model.*` key. Unknown keys are rejected.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.kind" => self.kind = value.parse()?,
            "model.joints" => self.num_joints = parse_num(key, value)?,
            "model.window" => self.window = parse_num(key, value)?,
            "model.persons" => self.max_persons = parse_num(key, value)?,
            "model.classes" => self.num_classes = parse_num(key, value)?,
            "model.reduction" => self.reduction = parse_num(key, value)?,
            "model.ham-mode" => self.ham_mode = value.parse()?,
            "model.xi-input" => self.xi_input = value.parse()?,
            "model.layout" => self.layout = value.trim().to_string(),
            "model.partition-dir" => {
                self.partition_dir = if value.trim().is_empty() {
                    None
                } else {
                    Some(value.trim().into())
                }
            }
            "model.hypergraphs" => {
                self.hypergraphs = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse())
                    .collect::<Result<Vec<_>>>()?;
            }
            "model.blocks" => {
                self.blocks = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse())
                    .collect::<Result<Vec<_>>>()?;
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

pub(crate) fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["full", "baseline", "tiny", "reduced"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn config_text_round_trips() {
        let cfg = ModelConfig::reduced();
        let text = cfg.to_text();
        let mut rebuilt = ModelConfig::full();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            rebuilt.apply_kv(k, v).unwrap();
        }
        assert_eq!(rebuilt.to_text(), text);
    }

    #[test]
    fn bad_chain_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.blocks[1].c_in = 16;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stride_three_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.blocks[1].stride = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = ModelConfig::full();
        assert!(cfg.apply_kv("model.bogus", "1").is_err());
    }

    #[test]
    fn embed_width_special_cases_input_block() {
        let cfg = ModelConfig::full();
        assert_eq!(cfg.embed_width(3), 8);
        assert_eq!(cfg.embed_width(64), 8);
        assert_eq!(cfg.embed_width(256), 32);
    }
}
