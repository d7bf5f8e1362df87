//! Binary checkpoints of trained models.
//!
//! Layout (little-endian): magic `CCKP`, version u8, u32 length + JSON header
//! (config, dims, history), u32 parameter count, then per parameter a u16
//! name length + UTF-8 name, u8 rank, u32 dims and f64 values, and finally a
//! CRC-64 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checksum::crc64;
use crate::dataio::ceb::write_atomic;
use crate::dataio::Dims;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::trainer::{EpochRecord, TrainConfig, TrainedModel};

pub const MAGIC: &[u8; 4] = b"CCKP";
pub const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    dims: Dims,
    history: Vec<EpochRecord>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint(trained: &TrainedModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        config: trained.config.clone(),
        dims: trained.model.dims,
        history: trained.history.clone(),
    })
    .map_err(|e| err(format!("cannot serialize header: {e}")))?;
    let params = trained.model.named_params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&u32::try_from(header.len()).map_err(|_| err("header too large"))?.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&crc64(&out).to_le_bytes());
    Ok(out)
}

pub fn save_checkpoint(trained: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(trained)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    decode_checkpoint(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(err(format!("truncated while reading {what} at byte {}", self.pos)));
        };
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
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < MAGIC.len() + 1 + 8 {
        return Err(err(format!("file of {} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(err("bad magic, not a checkpoint"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
    if crc64(body) != stored {
        return Err(err("checksum mismatch (truncated or corrupted file)"));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| err(format!("invalid header: {e}")))?;
    header.config.validate()?;
    let mut model = Model::init(header.dims, header.config.architecture(), header.config.seed)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32("parameter count")? as usize;
    if count != expected.len() {
        return Err(err(format!(
            "checkpoint holds {count} parameters, configuration implies {}",
            expected.len()
        )));
    }
    let mut params = model.params_mut();
    for ((want_name, want_shape), p) in expected.iter().zip(params.iter_mut()) {
        let name_len = r.u16("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| err("parameter name is not UTF-8"))?;
        if name != want_name {
            return Err(err(format!("expected parameter {want_name}, found {name}")));
        }
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &shape != want_shape {
            return Err(err(format!(
                "parameter {name} has shape {shape:?}, configuration implies {want_shape:?}"
            )));
        }
        let raw = r.take(p.numel() * 8, name)?;
        for (dst, chunk) in p.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    drop(params);
    if r.pos != body.len() {
        return Err(err(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(TrainedModel {
        model,
        config: header.config,
        history: header.history,
    })
}
