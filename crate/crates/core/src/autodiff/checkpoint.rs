//! `AVCK` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AVCK" | u32 version | record*
//! record := u32 name_len | name (UTF-8) | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
//! ```
//!
//! Parameters use their plain names. Adam moments are stored under
//! `moment1/<name>` and `moment2/<name>`. String metadata is carried in
//! zero-length records named `meta/<key>=<value>`.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::optim::{AdamConfig, OptimizerState};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
    pub meta: BTreeMap<String, String>,
}

pub(crate) fn write_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Self {
            params,
            optimizer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mut meta = self.meta.clone();
        if let Some(opt) = &self.optimizer {
            meta.insert("optimizer/step".into(), opt.step.to_string());
            meta.insert("optimizer/beta1".into(), opt.config.beta1.to_string());
            meta.insert("optimizer/beta2".into(), opt.config.beta2.to_string());
            meta.insert("optimizer/eps".into(), opt.config.eps.to_string());
            meta.insert("optimizer/clip_norm".into(), opt.config.clip_norm.to_string());
        }
        for (k, v) in &meta {
            write_record(&mut out, &format!("meta/{k}={v}"), &[0], &[]);
        }
        for (name, t) in self.params.iter() {
            write_record(&mut out, name, t.shape(), t.data());
        }
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [("moment1/", &opt.moment1), ("moment2/", &opt.moment2)] {
                for (name, t) in moments {
                    write_record(&mut out, &format!("{prefix}{name}"), t.shape(), t.data());
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected AVCK".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::default();
        let mut m1 = BTreeMap::new();
        let mut m2 = BTreeMap::new();
        while !r.done() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Checkpoint(format!("record name: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let t = Tensor::new(&shape, data)?;
            if let Some(kv) = name.strip_prefix("meta/") {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Checkpoint(format!("bad meta record {name}")))?;
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(p) = name.strip_prefix("moment1/") {
                m1.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix("moment2/") {
                m2.insert(p.to_string(), t);
            } else {
                ck.params.insert(name, t);
            }
        }
        if let Some(step) = ck.meta.remove("optimizer/step") {
            let parse = |k: &str, ck: &mut Checkpoint| -> Result<f64> {
                ck.meta
                    .remove(k)
                    .ok_or_else(|| Error::Checkpoint(format!("missing {k}")))?
                    .parse()
                    .map_err(|e| Error::Checkpoint(format!("{k}: {e}")))
            };
            let config = AdamConfig {
                beta1: parse("optimizer/beta1", &mut ck)?,
                beta2: parse("optimizer/beta2", &mut ck)?,
                eps: parse("optimizer/eps", &mut ck)?,
                clip_norm: parse("optimizer/clip_norm", &mut ck)?,
            };
            ck.optimizer = Some(OptimizerState {
                step: step.parse().map_err(|e| Error::Checkpoint(format!("step: {e}")))?,
                config,
                moment1: m1,
                moment2: m2,
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// SHA-256 of the serialized bytes, hex encoded.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_optimizer() {
        let mut p = ParamStore::new();
        p.insert("asr/joint/w", Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.25, 0.0, 3.0]).unwrap());
        p.insert("selector/W", Tensor::scalar(1.5));
        let mut opt = OptimizerState::new(AdamConfig::default());
        opt.step = 7;
        opt.moment1.insert("selector/W".into(), Tensor::scalar(0.125));
        opt.moment2.insert("selector/W".into(), Tensor::scalar(0.0625));
        let mut ck = Checkpoint::new(p);
        ck.optimizer = Some(opt);
        ck.meta.insert("config_digest".into(), "abc123".into());
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"AVCK");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::from_bytes(b"XXXX\x01\0\0\0").is_err());
        let mut p = ParamStore::new();
        p.insert("a", Tensor::zeros(&[4]));
        let bytes = Checkpoint::new(p).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
