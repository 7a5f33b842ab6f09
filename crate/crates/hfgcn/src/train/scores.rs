//! Per-sample score tables and multi-stream fusion.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

/// Per-sample, per-class scores for one modality stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub num_classes: usize,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.scores.iter().map(|row| argmax(row)).collect()
    }

    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let hits = self
            .predictions()
            .iter()
            .zip(&self.labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / self.len() as f64
    }

    /// CSV with header `sample_id,label,score_0..score_{K-1}`; scores use
    /// the shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,label");
        for k in 0..self.num_classes {
            let _ = write!(out, ",score_{k}");
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{},{}", self.ids[i], self.labels[i]);
            for s in &self.scores[i] {
                let _ = write!(out, ",{s}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<ScoreTable> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Format("empty score file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "sample_id" || cols[1] != "label" {
            return Err(Error::Format(
                "score header must be sample_id,label,score_0..".into(),
            ));
        }
        let num_classes = cols.len() - 2;
        for (k, col) in cols[2..].iter().enumerate() {
            if *col != format!("score_{k}") {
                return Err(Error::Format(format!("unexpected score column '{col}'")));
            }
        }
        let mut table = ScoreTable {
            num_classes,
            ids: Vec::new(),
            labels: Vec::new(),
            scores: Vec::new(),
        };
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + num_classes {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected {} fields, got {}", 2 + num_classes, fields.len()),
                });
            }
            table.ids.push(fields[0].to_string());
            table.labels.push(usize::from_str(fields[1]).map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad label '{}'", fields[1]),
            })?);
            let row = fields[2..]
                .iter()
                .map(|f| {
                    f64::from_str(f).map_err(|_| Error::Parse {
                        line: lineno + 1,
                        msg: format!("bad score '{f}'"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            table.scores.push(row);
        }
        Ok(table)
    }

    pub fn read_csv(path: &Path) -> Result<ScoreTable> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fusion space: weighted sums of probabilities, or of log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionSpace {
    Probability,
    LogProbability,
}

impl FromStr for FusionSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "prob" => Ok(FusionSpace::Probability),
            "log-prob" => Ok(FusionSpace::LogProbability),
            other => Err(Error::Config(format!(
                "unknown fusion space '{other}' (expected prob|log-prob)"
            ))),
        }
    }
}

/// Fused predictions across streams.
#[derive(Debug, Clone)]
pub struct FusedPredictions {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub fused_scores: Vec<Vec<f64>>,
}

impl FusedPredictions {
    pub fn accuracy(&self) -> f64 {
        if self.ids.is_empty() {
            return 0.0;
        }
        let hits = self
            .predictions
            .iter()
            .zip(&self.labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / self.ids.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,label,prediction\n");
        for i in 0..self.ids.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.ids[i], self.labels[i], self.predictions[i]
            );
        }
        out
    }
}

/// Weighted-sum fusion over streams with consistent sample sets. Streams may
/// order samples differently; rows are matched by id. Prediction is the
/// argmax of the fused score.
pub fn fuse_scores(
    tables: &[ScoreTable],
    weights: &[f64],
    space: FusionSpace,
) -> Result<FusedPredictions> {
    if tables.is_empty() {
        return Err(Error::Config("fusion needs at least one score table".into()));
    }
    if weights.len() != tables.len() {
        return Err(Error::Config(format!(
            "{} weights for {} tables",
            weights.len(),
            tables.len()
        )));
    }
    let k = tables[0].num_classes;
    let n = tables[0].len();
    for t in tables {
        if t.num_classes != k {
            return Err(Error::Shape(format!(
                "class count mismatch across tables ({} vs {k})",
                t.num_classes
            )));
        }
        if t.len() != n {
            return Err(Error::Shape(format!(
                "sample count mismatch across tables ({} vs {n})",
                t.len()
            )));
        }
    }

    // Index every table by id against the first table's order.
    let mut fused = FusedPredictions {
        ids: tables[0].ids.clone(),
        labels: tables[0].labels.clone(),
        predictions: Vec::with_capacity(n),
        fused_scores: vec![vec![0.0; k]; n],
    };
    for (ti, table) in tables.iter().enumerate() {
        let mut index: std::collections::HashMap<&str, usize> =
            std::collections::HashMap::with_capacity(n);
        for (row, id) in table.ids.iter().enumerate() {
            if index.insert(id.as_str(), row).is_some() {
                return Err(Error::Format(format!("duplicate sample id '{id}'")));
            }
        }
        for (i, id) in fused.ids.iter().enumerate() {
            let &row = index.get(id.as_str()).ok_or_else(|| {
                Error::Format(format!("stream {ti} is missing sample '{id}'"))
            })?;
            if table.labels[row] != fused.labels[i] {
                return Err(Error::Format(format!(
                    "label mismatch for sample '{id}' across streams"
                )));
            }
            for (acc, &s) in fused.fused_scores[i].iter_mut().zip(&table.scores[row]) {
                *acc += weights[ti]
                    * match space {
                        FusionSpace::Probability => s,
                        FusionSpace::LogProbability => s.max(1e-300).ln(),
                    };
            }
        }
    }
    fused.predictions = fused.fused_scores.iter().map(|row| argmax(row)).collect();
    Ok(fused)
}
