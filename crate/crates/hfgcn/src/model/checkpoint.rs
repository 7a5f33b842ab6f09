//! Checkpoints: named parameter blobs, running normalization statistics,
//! optional optimizer momenta, and an echo of the architecture config.
//!
//! Binary layout, integers little-endian:
//!
//! ```text
//! magic "HFGW1"
//! u32 config length, UTF-8 config text (key=value lines)
//! u32 blob count
//! per blob: u32 name length, name, u32 rank, u32 dims[rank], f64 values
//! u32 CRC32 of everything after the magic
//! ```

use super::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 5] = b"HFGW1";

/// Deserialized checkpoint contents.
#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub config_text: String,
    pub blobs: BTreeMap<String, Tensor>,
}

impl CheckpointData {
    pub fn epoch(&self) -> u64 {
        self.blobs
            .get("meta.epoch")
            .map(|t| t.data()[0] as u64)
            .unwrap_or(0)
    }

    /// Momentum buffers stored under `momentum.<param>`.
    pub fn momentum(&self, param_name: &str) -> Option<&Tensor> {
        self.blobs.get(&format!("momentum.{param_name}"))
    }
}

fn push_blob(blobs: &mut Vec<(String, Tensor)>, name: String, t: Tensor) {
    blobs.push((name, t));
}

/// Serialize the model plus optional trainer state.
pub fn save_checkpoint(
    path: &Path,
    model: &mut Model,
    epoch: u64,
    momenta: Option<&[(String, Tensor)]>,
) -> Result<()> {
    let mut blobs: Vec<(String, Tensor)> = Vec::new();
    for p in model.store.iter() {
        push_blob(&mut blobs, format!("param.{}", p.name), p.value.clone());
    }
    model.visit_bns(&mut |bn| {
        let c = bn.state.mean.len();
        push_blob(
            &mut blobs,
            format!("bn.{}.mean", bn.name),
            Tensor::from_vec(&[c], bn.state.mean.clone()).unwrap(),
        );
        push_blob(
            &mut blobs,
            format!("bn.{}.var", bn.name),
            Tensor::from_vec(&[c], bn.state.var.clone()).unwrap(),
        );
        push_blob(
            &mut blobs,
            format!("bn.{}.init", bn.name),
            Tensor::scalar(if bn.state.initialized { 1.0 } else { 0.0 }),
        );
    });
    if let Some(momenta) = momenta {
        for (name, t) in momenta {
            push_blob(&mut blobs, format!("momentum.{name}"), t.clone());
        }
    }
    push_blob(&mut blobs, "meta.epoch".into(), Tensor::scalar(epoch as f64));

    let config_text = model.config.to_text();
    let mut body = Vec::new();
    body.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    body.extend_from_slice(config_text.as_bytes());
    body.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, t) in &blobs {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);

    let mut file = File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&body)?;
    file.write_all(&crc.to_le_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() < 4 {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let (body, crc_bytes) = body.split_at(body.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Format(format!(
            "checkpoint checksum failure (stored {stored:#010x}, computed {computed:#010x})"
        )));
    }

    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > body.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &body[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };
    let take_u32 = |cursor: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()))
    };

    let cfg_len = take_u32(&mut cursor)? as usize;
    let config_text = String::from_utf8(take(&mut cursor, cfg_len)?.to_vec())
        .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
    let blob_count = take_u32(&mut cursor)? as usize;
    let mut blobs = BTreeMap::new();
    for _ in 0..blob_count {
        let name_len = take_u32(&mut cursor)? as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|_| Error::Format("blob name is not UTF-8".into()))?;
        let rank = take_u32(&mut cursor)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut cursor)? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = take(&mut cursor, count * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        blobs.insert(name, Tensor::from_vec(&shape, data)?);
    }
    Ok(CheckpointData { config_text, blobs })
}

impl Model {
    /// Restore parameters and normalization state from checkpoint blobs.
    /// Every parameter and statistic must be present with matching shape.
    pub fn load_state(&mut self, data: &CheckpointData) -> Result<()> {
        for p in self.store.iter_mut() {
            let key = format!("param.{}", p.name);
            let blob = data
                .blobs
                .get(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {key}")))?;
            if blob.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint blob {key} has shape {:?}, expected {:?}",
                    blob.shape(),
                    p.value.shape()
                )));
            }
            p.value = blob.clone();
        }
        let mut missing = Vec::new();
        self.visit_bns(&mut |bn| {
            let mean = data.blobs.get(&format!("bn.{}.mean", bn.name));
            let var = data.blobs.get(&format!("bn.{}.var", bn.name));
            let init = data.blobs.get(&format!("bn.{}.init", bn.name));
            match (mean, var, init) {
                (Some(m), Some(v), Some(i)) => {
                    bn.state.mean = m.data().to_vec();
                    bn.state.var = v.data().to_vec();
                    bn.state.initialized = i.data()[0] != 0.0;
                }
                _ => missing.push(bn.name.clone()),
            }
        });
        if !missing.is_empty() {
            return Err(Error::Format(format!(
                "checkpoint is missing normalization state for {missing:?}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn checkpoint_round_trips_model_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hfgw");
        let mut model = Model::new(ModelConfig::tiny(), 7).unwrap();
        // Touch the BN states so there is something non-default to carry.
        let x = Tensor::uniform(
            &[2, 3, 8, 25, 1],
            1.0,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1),
        );
        model.logits(&x, true).unwrap();
        save_checkpoint(&path, &mut model, 3, None).unwrap();

        let data = load_checkpoint(&path).unwrap();
        assert_eq!(data.epoch(), 3);
        assert_eq!(data.config_text, model.config.to_text());

        let mut restored = Model::new(ModelConfig::tiny(), 99).unwrap();
        restored.load_state(&data).unwrap();
        let a = model.logits(&x, false).unwrap();
        let b = restored.logits(&x, false).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn corrupted_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hfgw");
        let mut model = Model::new(ModelConfig::tiny(), 7).unwrap();
        save_checkpoint(&path, &mut model, 0, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
