//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes  "MARLCCKP"
//! version      u32
//! config       u64 length + UTF-8 JSON
//! store count  u32
//! per store:   u32 name length, name, u64 step count, u32 entry count
//!   per entry: u32 name length, name, u32 rank, u64 dims[rank],
//!              f64 values[n], f64 first moment[n], f64 second moment[n]
//! digest       32 bytes SHA-256 of everything above
//! ```
//!
//! All integers and floats are little-endian. The optimizer moments and step
//! counts are stored so a resumed run is bit-identical to an uninterrupted one.

use sha2::{Digest, Sha256};

use super::{params::ParamEntry, ParameterStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MARLCCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub stores: Vec<(String, ParameterStore)>,
}

pub fn encode_checkpoint(config_json: &str, stores: &[(&str, &ParameterStore)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(config_json.as_bytes());
    buf.extend_from_slice(&(stores.len() as u32).to_le_bytes());
    for (name, store) in stores {
        put_str(&mut buf, name);
        buf.extend_from_slice(&store.step_count().to_le_bytes());
        buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
        for e in store.entries() {
            put_str(&mut buf, &e.name);
            let shape = e.value.shape();
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                buf.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for arr in [e.value.values(), &e.m[..], &e.v[..]] {
                for x in arr {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(digest.as_slice());
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("digest mismatch (corrupted file)".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = r.u64()? as usize;
    let config_json = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let n_stores = r.u32()?;
    let mut stores = Vec::with_capacity(n_stores as usize);
    for _ in 0..n_stores {
        let name = r.string()?;
        let step_count = r.u64()?;
        let n_entries = r.u32()?;
        let mut store = ParameterStore::new();
        for _ in 0..n_entries {
            let pname = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = r.f64s(n)?;
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            store.push_entry(ParamEntry {
                name: pname,
                value: Tensor::new(shape, values)?,
                grad: vec![0.0; n],
                m,
                v,
            })?;
        }
        store.set_step_count(step_count);
        stores.push((name, store));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { config_json, stores })
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
