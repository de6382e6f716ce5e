//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic "FLATVAE\0" | version u32 | config_len u32 | config JSON (sorted keys)
//! | epoch u64 | has_optimizer u8 [| optimizer_step u64]
//! | tensor_count u32 | { name_len u32 | name | ndims u32 | dims u64.. | f64.. }*
//! | crc32 u32 over every preceding byte
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::VaeConfig;
use super::model::VaeModel;
use super::optim::OptimizerState;
use crate::error::{Error, Result};
use crate::linalg::Tensor2;

pub const MAGIC: &[u8; 8] = b"FLATVAE\0";
pub const VERSION: u32 = 1;
const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: VaeModel,
    pub optimizer: Option<OptimizerState>,
    pub epoch: u64,
}

impl Checkpoint {
    pub fn config(&self) -> &VaeConfig {
        self.model.config()
    }
}

pub fn encode_checkpoint(model: &VaeModel, optimizer: Option<&OptimizerState>, epoch: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let json = model.config().to_canonical_json();
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(json.as_bytes());
    buf.extend_from_slice(&epoch.to_le_bytes());
    match optimizer {
        Some(o) => {
            buf.push(1);
            buf.extend_from_slice(&o.step.to_le_bytes());
        }
        None => buf.push(0),
    }

    let names = model.param_names();
    let mut tensors: Vec<(String, &Tensor2)> = names.iter().cloned().zip(model.params()).collect();
    tensors.extend(model.buffers());
    if let Some(o) = optimizer {
        tensors.extend(names.iter().map(|n| format!("{OPTIM_PREFIX}{n}")).zip(&o.accumulators));
    }
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_checkpoint(model: &VaeModel, optimizer: Option<&OptimizerState>, epoch: u64, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model, optimizer, epoch)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Corrupt("dimension overflow".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let prefix = &bytes[..bytes.len().min(MAGIC.len())];
    if prefix != &MAGIC[..prefix.len()] || prefix.is_empty() {
        return Err(Error::NotACheckpoint);
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Corrupt("truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < 16 {
        return Err(Error::Corrupt("truncated header".into()));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(Error::Corrupt("checksum mismatch (file truncated or damaged)".into()));
    }

    let mut r = Reader {
        bytes: payload,
        pos: 12,
    };
    let json_len = r.u32()? as usize;
    let json =
        std::str::from_utf8(r.take(json_len)?).map_err(|_| Error::Corrupt("config block is not UTF-8".into()))?;
    let config: VaeConfig = serde_json::from_str(json).map_err(|e| Error::Corrupt(format!("config block: {e}")))?;
    let epoch = r.u64()?;
    let optimizer_step = match r.u8()? {
        0 => None,
        1 => Some(r.u64()?),
        other => return Err(Error::Corrupt(format!("optimizer flag {other}"))),
    };
    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, Tensor2> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let ndims = r.u32()?;
        if ndims != 2 {
            return Err(Error::Corrupt(format!("tensor {name} has {ndims} dims")));
        }
        let rows = r.len_u64()?;
        let cols = r.len_u64()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Corrupt("tensor size overflow".into()))?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Corrupt("tensor size overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if tensors
            .insert(name.clone(), Tensor2::from_vec(rows, cols, data)?)
            .is_some()
        {
            return Err(Error::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != payload.len() {
        return Err(Error::Corrupt("trailing bytes after tensors".into()));
    }

    let mut model = VaeModel::build(&config, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| Error::Corrupt(format!("stored config is invalid: {e}")))?;
    let mut take = |name: &str, slot: &mut Tensor2| -> Result<()> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Corrupt(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
        Ok(())
    };
    let names = model.param_names();
    for (name, slot) in names.iter().zip(model.params_mut()) {
        take(name, slot)?;
    }
    for (name, slot) in model.buffers_mut() {
        take(&name, slot)?;
    }
    let optimizer = match optimizer_step {
        None => None,
        Some(step) => {
            let mut state = OptimizerState::for_params(&model.params());
            for (name, slot) in names.iter().zip(&mut state.accumulators) {
                take(&format!("{OPTIM_PREFIX}{name}"), slot)?;
            }
            state.step = step;
            Some(state)
        }
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Corrupt(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        epoch,
    })
}
