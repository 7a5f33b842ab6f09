//! The canonical on-disk sample container.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic "HFG1"
//! u32 version (= 1)
//! u32 sample count
//! u32 V (joints per body)
//! u32 M_max (bodies per sample)
//! per sample:
//!   u32 id length, UTF-8 id bytes
//!   u32 label
//!   u32 T_raw
//!   M_max * T_raw * V * 3 coordinates as f32 (m-major, then t, v, axis;
//!   missing bodies zero-filled)
//!   u32 CRC32 of the sample payload (everything from the id length through
//!   the last coordinate byte)
//! ```

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HFG1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Container {
    pub num_joints: usize,
    pub max_persons: usize,
    pub samples: Vec<SkeletonSequence>,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn sample_payload(seq: &SkeletonSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + seq.sample_id.len() + seq.coords().len() * 4);
    push_u32(&mut buf, seq.sample_id.len() as u32);
    buf.extend_from_slice(seq.sample_id.as_bytes());
    push_u32(&mut buf, seq.label);
    push_u32(&mut buf, seq.num_frames as u32);
    for &c in seq.coords() {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf
}

/// Write samples to `path`. All samples must share V and M (the container's
/// `max_persons`). Round-trips losslessly with [`read_container`].
pub fn write_container(
    path: &Path,
    samples: &[SkeletonSequence],
    num_joints: usize,
    max_persons: usize,
) -> Result<()> {
    for seq in samples {
        if seq.num_joints != num_joints || seq.num_persons != max_persons {
            return Err(Error::Shape(format!(
                "sample {} has (M={}, V={}), container expects (M={max_persons}, V={num_joints})",
                seq.sample_id, seq.num_persons, seq.num_joints
            )));
        }
        seq.validate()?;
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    w.write_all(&(num_joints as u32).to_le_bytes())?;
    w.write_all(&(max_persons as u32).to_le_bytes())?;
    for seq in samples {
        let payload = sample_payload(seq);
        let crc = crc32fast::hash(&payload);
        w.write_all(&payload)?;
        w.write_all(&crc.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.inner.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }
}

pub fn read_container(path: &Path) -> Result<Container> {
    let file = File::open(path)?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a sample container (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "container version {version} unsupported (expected {VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    let num_joints = r.u32()? as usize;
    let max_persons = r.u32()? as usize;
    if num_joints == 0 || max_persons == 0 {
        return Err(Error::Format("container header has zero extents".into()));
    }

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let id_len_bytes = r.bytes(4)?;
        let id_len = u32::from_le_bytes(id_len_bytes.clone().try_into().unwrap()) as usize;
        let id_bytes = r.bytes(id_len)?;
        let label_bytes = r.bytes(4)?;
        let t_bytes = r.bytes(4)?;
        let t_raw = u32::from_le_bytes(t_bytes.clone().try_into().unwrap()) as usize;
        let coord_count = max_persons * t_raw * num_joints * 3;
        let coord_bytes = r.bytes(coord_count * 4)?;
        let stored_crc = r.u32()?;

        let mut payload =
            Vec::with_capacity(4 + id_len + 8 + coord_bytes.len());
        payload.extend_from_slice(&id_len_bytes);
        payload.extend_from_slice(&id_bytes);
        payload.extend_from_slice(&label_bytes);
        payload.extend_from_slice(&t_bytes);
        payload.extend_from_slice(&coord_bytes);
        let crc = crc32fast::hash(&payload);
        if crc != stored_crc {
            return Err(Error::Format(format!(
                "checksum failure in sample {i} (stored {stored_crc:#010x}, computed {crc:#010x})"
            )));
        }

        let sample_id = String::from_utf8(id_bytes)
            .map_err(|_| Error::Format(format!("sample {i} id is not UTF-8")))?;
        let label = u32::from_le_bytes(label_bytes.try_into().unwrap());
        let coords: Vec<f32> = coord_bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(SkeletonSequence::from_coords(
            &sample_id,
            label,
            max_persons,
            t_raw,
            num_joints,
            coords,
        )?);
    }
    Ok(Container {
        num_joints,
        max_persons,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(rng: &mut ChaCha8Rng, i: usize) -> SkeletonSequence {
        let t = rng.gen_range(1..6);
        let mut seq = SkeletonSequence::zeros(&format!("sample-{i}"), rng.gen_range(0..40), 2, t, 25);
        for m in 0..2 {
            for ti in 0..t {
                for v in 0..25 {
                    for a in 0..3 {
                        seq.set(m, ti, v, a, rng.gen_range(-2.0f32..2.0));
                    }
                }
            }
        }
        seq
    }

    #[test]
    fn empty_container_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.hfg");
        write_container(&path, &[], 25, 2).unwrap();
        let c = read_container(&path).unwrap();
        assert!(c.samples.is_empty());
        assert_eq!(c.num_joints, 25);
        assert_eq!(c.max_persons, 2);
    }

    #[test]
    fn hundred_random_samples_round_trip_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let samples: Vec<_> = (0..100).map(|i| random_sample(&mut rng, i)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.hfg");
        write_container(&path, &samples, 25, 2).unwrap();
        let c = read_container(&path).unwrap();
        assert_eq!(c.samples.len(), 100);
        for (a, b) in samples.iter().zip(&c.samples) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = vec![random_sample(&mut rng, 0)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hfg");
        write_container(&path, &samples, 25, 2).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match read_container(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.hfg");
        write_container(&path, &[], 25, 2).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // version field
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_container(&path), Err(Error::Format(_))));
    }
}
