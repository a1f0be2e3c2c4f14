//! Binary checkpoint container.
//!
//! ```text
//! "VANN"                      magic
//! u16                         format version (1)
//! u32, bytes                  UTF-8 TOML header: [config] and [meta] tables
//! u32                         tensor count
//! per tensor, in name order:
//!   u16, bytes                UTF-8 name
//!   u8                        rank
//!   u32 * rank                extents
//!   f32 * product(extents)    values
//! [u8; 8]                     first 8 bytes of SHA-256 over everything above
//! ```
//!
//! Integers and floats are little-endian. The checksum is verified before
//! any other field is interpreted.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use veinatn_autodiff::Tensor;

use super::{ModelConfig, ModelParams};
use crate::error::{io_err, Error, Result};
use crate::image::ClaheParams;

pub const MAGIC: &[u8; 4] = b"VANN";
pub const VERSION: u16 = 1;
const CHECKSUM_LEN: usize = 8;
const MAX_RANK: usize = 8;

/// Training provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    #[serde(default)]
    pub stream: String,
    /// Kept as text: TOML integers are signed 64-bit.
    #[serde(default, with = "seed_text")]
    pub seed: u64,
    #[serde(default)]
    pub epochs_run: usize,
    #[serde(default)]
    pub selected_epoch: usize,
    #[serde(default)]
    pub train_loss: Vec<f64>,
    #[serde(default)]
    pub train_accuracy: Vec<f64>,
    #[serde(default)]
    pub val_accuracy: Vec<f64>,
    /// Enhancement applied to this stream's inputs, if any.
    #[serde(default)]
    pub clahe: Option<ClaheParams>,
}

mod seed_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    meta: TrainMeta,
}

pub fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = toml::to_string(&Header { config: ckpt.config.clone(), meta: ckpt.meta.clone() })
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let tensors: Vec<_> = ckpt.params.iter().collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated reading {what}: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 2 + CHECKSUM_LEN {
        return Err(Error::Checkpoint(format!("truncated: {} bytes", bytes.len())));
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if checksum(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch; file is corrupt or truncated".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, this build reads {VERSION}")));
    }
    let len = r.u32("header length")? as usize;
    let text = std::str::from_utf8(r.take(len, "header")?)
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let header: Header = toml::from_str(text).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    header.config.validate()?;

    let count = r.u32("tensor count")? as usize;
    let mut tensors = BTreeMap::new();
    for i in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("`{name}`: rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|&n| n > 0 && n <= r.remaining() / 4)
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: extents {shape:?} do not fit the file")))?;
        let data = r
            .take(numel * 4, "values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", r.remaining())));
    }
    let params = ModelParams::from_map(&header.config, tensors).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint { config: header.config, params, meta: header.meta })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(io_err(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
