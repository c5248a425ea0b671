//! Binary checkpoint: `SMRK1`, u32 LE manifest length, manifest JSON, the
//! parameter blocks as f64 LE in manifest order, then the FNV-1a 64 checksum
//! of every preceding byte as u64 LE.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelParams, ModelShape};
use super::{GroupSet, RankerError};
use crate::hash::Fnv1a64;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SMRK1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    shape: ModelShape,
    enabled: GroupSet,
    seed: u64,
    blocks: Vec<BlockEntry>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    len: usize,
}

fn block_names(params: &ModelParams) -> Vec<String> {
    let mut names: Vec<String> = super::TableId::ALL.iter().map(|t| format!("table.{}", t.name())).collect();
    for l in 0..params.trunk.len() {
        names.push(format!("trunk.{l}.weights"));
        names.push(format!("trunk.{l}.bias"));
    }
    names.push("heads.weights".into());
    names.push("heads.bias".into());
    names
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, out: W) -> Result<(), RankerError> {
    let blocks = params.blocks();
    let manifest = Manifest {
        shape: params.shape.clone(),
        enabled: params.enabled,
        seed: params.seed,
        blocks: block_names(params)
            .into_iter()
            .zip(&blocks)
            .map(|(name, b)| BlockEntry { name, len: b.len() })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| RankerError::InvalidConfig(e.to_string()))?;
    let json_len = u32::try_from(json.len()).map_err(|_| RankerError::InvalidConfig("manifest too large".into()))?;

    let mut out = HashingWriter {
        inner: out,
        hash: Fnv1a64::new(),
    };
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&json_len.to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(8 * 4096);
    for block in blocks {
        for chunk in block.chunks(4096) {
            buf.clear();
            chunk.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            out.write_all(&buf)?;
        }
    }
    let sum = out.hash.finish();
    out.inner.write_all(&sum.to_le_bytes())?;
    out.inner.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParams, RankerError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(RankerError::VersionMismatch("bad magic bytes".into()));
    }
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 8 {
        return Err(RankerError::CorruptChecksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let mut h = Fnv1a64::new();
    h.write(body);
    if h.finish() != stored {
        return Err(RankerError::CorruptChecksum);
    }

    let mut pos = CHECKPOINT_MAGIC.len();
    let json_len = u32::from_le_bytes(body[pos..pos + 4].try_into().expect("4 bytes")) as usize;
    pos += 4;
    let json = body.get(pos..pos + json_len).ok_or(RankerError::CorruptChecksum)?;
    pos += json_len;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| RankerError::VersionMismatch(format!("manifest: {e}")))?;

    let mut params = ModelParams::zeros(manifest.shape, manifest.enabled)?;
    params.seed = manifest.seed;
    let expected: Vec<BlockEntry> = block_names(&params)
        .into_iter()
        .zip(params.blocks())
        .map(|(name, b)| BlockEntry { name, len: b.len() })
        .collect();
    if expected != manifest.blocks {
        return Err(RankerError::VersionMismatch("block layout does not match shape".into()));
    }
    let n_values: usize = expected.iter().map(|b| b.len).sum();
    if body.len() - pos != n_values * 8 {
        return Err(RankerError::VersionMismatch("payload length does not match manifest".into()));
    }
    let mut values = body[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for block in params.blocks_mut() {
        for (slot, v) in block.iter_mut().zip(&mut values) {
            *slot = v;
        }
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), RankerError> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(params, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, RankerError> {
    read_checkpoint(std::fs::File::open(path)?)
}

struct HashingWriter<W> {
    inner: W,
    hash: Fnv1a64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hash.write(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureGroup;

    fn params() -> ModelParams {
        let shape = ModelShape {
            visual_dim: 3,
            embed_dim: 4,
            hidden: vec![5, 2],
            user_rows: 7,
            item_rows: 6,
            item_token_rows: 9,
            profile_token_rows: 8,
        };
        let mut p = ModelParams::init(shape, GroupSet::all().without(FeatureGroup::ProfileTokens), 11).unwrap();
        // Values whose bit patterns are easy to mangle.
        p.heads.bias = vec![-0.0, f64::MIN_POSITIVE, 1e-310, f64::MAX, 0.1];
        p
    }

    fn bytes(p: &ModelParams) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(p, &mut buf).unwrap();
        buf
    }

    fn bits(p: &ModelParams) -> Vec<u64> {
        p.flat_values().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = params();
        let q = read_checkpoint(bytes(&p).as_slice()).unwrap();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(p.shape, q.shape);
        assert_eq!(p.enabled, q.enabled);
        assert_eq!(p.seed, q.seed);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.smrk");
        let p = params();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(bits(&load_checkpoint(&path).unwrap()), bits(&p));
    }

    #[test]
    fn truncation_and_bit_flips_fail_checksum() {
        let buf = bytes(&params());
        for cut in [buf.len() - 1, buf.len() - 9, buf.len() / 2, 9] {
            assert!(
                matches!(read_checkpoint(&buf[..cut]), Err(RankerError::CorruptChecksum)),
                "cut at {cut}"
            );
        }
        for pos in [6, 20, buf.len() / 2, buf.len() - 3] {
            let mut bad = buf.clone();
            bad[pos] ^= 0x10;
            assert!(matches!(read_checkpoint(bad.as_slice()), Err(RankerError::CorruptChecksum)));
        }
    }

    #[test]
    fn wrong_magic_is_version_mismatch() {
        let mut buf = bytes(&params());
        buf[4] = b'2';
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(RankerError::VersionMismatch(_))));
        assert!(matches!(read_checkpoint(&b"SM"[..]), Err(RankerError::VersionMismatch(_))));
    }

    #[test]
    fn starts_with_magic() {
        assert_eq!(&bytes(&params())[..5], b"SMRK1");
    }
}
