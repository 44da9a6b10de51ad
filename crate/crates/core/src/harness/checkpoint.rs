//! Binary parameter archive.
//!
//! ```text
//! "SKF1" | version u32 | config_len u32 | config JSON | entry_count u32
//! entry: name_len u32 | name UTF-8 | rank u32 | dims u32 x rank | f64 x numel
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Module, Tensor};

pub const MAGIC: &[u8; 4] = b"SKF1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub entries: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Input(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn from_module(config_json: &str, module: &dyn Module) -> Self {
        Self {
            config_json: config_json.to_string(),
            entries: module.named_params(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.config_json.len())?;
        out.extend_from_slice(self.config_json.as_bytes());
        put_u32(&mut out, self.entries.len())?;
        for (name, t) in &self.entries {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "bad magic, expected SKF1".into(),
            });
        }
        let at = r.pos;
        let version = r.u32("version")?;
        if version != VERSION as usize {
            return Err(Error::Format {
                offset: at,
                reason: format!("unsupported version {version}, expected {VERSION}"),
            });
        }
        let len = r.u32("config length")?;
        let at = r.pos;
        let config_json = String::from_utf8(r.take(len, "config")?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            reason: "config is not UTF-8".into(),
        })?;
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u32("name length")?;
            let at = r.pos;
            let name = String::from_utf8(r.take(len, "name")?.to_vec()).map_err(|_| Error::Format {
                offset: at,
                reason: "parameter name is not UTF-8".into(),
            })?;
            let at = r.pos;
            let rank = r.u32("rank")?;
            if rank == 0 || rank > 8 {
                return Err(Error::Format {
                    offset: at,
                    reason: format!("rank {rank} of `{name}` outside [1, 8]"),
                });
            }
            let at = r.pos;
            let shape = (0..rank).map(|_| r.u32("dim")).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d).filter(|_| d > 0))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Format {
                    offset: at,
                    reason: format!("invalid shape {shape:?} for `{name}`"),
                })?;
            let raw = r.take(numel * 8, "tensor data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                reason: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Self { config_json, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies values into `module`. Names and shapes must match the module's
    /// parameters one-for-one in visiting order; on mismatch nothing is written.
    pub fn apply_to(&self, module: &mut dyn Module) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = module
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} tensors, model has {}",
                self.entries.len(),
                expected.len()
            )));
        }
        for ((name, shape), (cname, t)) in expected.iter().zip(&self.entries) {
            if name != cname || shape.as_slice() != t.shape() {
                return Err(Error::Contract(format!(
                    "checkpoint tensor `{cname}` {:?} does not match model tensor `{name}` {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = self.entries.iter();
        module.visit_mut(&mut |p| {
            let (_, t) = it.next().expect("counts checked");
            p.value.data_mut().copy_from_slice(t.data());
        });
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}
