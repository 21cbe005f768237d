//! Binary checkpoint container.
//!
//! Layout: `"ETCK"`, `u32` format version, 32-byte config hash, `u64` step,
//! `u32` tensor count, then per tensor: `u32` name length, UTF-8 name,
//! `u32` rank, `u64` extents, `u8` dtype tag, `u64` absolute payload offset.
//! Payloads follow the table as little-endian `f32`. All integers are
//! little-endian. Optimizer moments are stored as `adam.m/<name>` and
//! `adam.v/<name>`.

use std::path::Path;

use sonotrans_tensor::{ParamSet, Tensor};

use super::optim::Adam;
use crate::hash::to_hex;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ETCK";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: [u8; 32],
    pub step: u64,
    pub params: ParamSet<f32>,
    /// Moments in parameter order; empty when no update has been taken.
    pub adam_m: Vec<Tensor<f32>>,
    pub adam_v: Vec<Tensor<f32>>,
}

/// One row of the tensor table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: u8,
    pub offset: u64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Integrity(format!(
                "checkpoint truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new(config_hash: [u8; 32], step: u64, params: ParamSet<f32>, adam: Option<&Adam<f32>>) -> Self {
        let (adam_m, adam_v) = match adam {
            Some(a) if a.t > 0 => (a.m.clone(), a.v.clone()),
            _ => (Vec::new(), Vec::new()),
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            config_hash,
            step,
            params,
            adam_m,
            adam_v,
        }
    }

    /// Optimizer restored from the stored moments.
    pub fn optimizer(&self, learning_rate: f64, clip_norm: f64) -> Result<Adam<f32>> {
        let mut adam = Adam::new(&self.params, learning_rate, clip_norm)?;
        if !self.adam_m.is_empty() {
            adam.m = self.adam_m.clone();
            adam.v = self.adam_v.clone();
            adam.t = self.step;
        }
        Ok(adam)
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> =
            self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        for (i, (name, _)) in self.params.iter().enumerate() {
            if let (Some(m), Some(v)) = (self.adam_m.get(i), self.adam_v.get(i)) {
                out.push((format!("{M_PREFIX}{name}"), m));
                out.push((format!("{V_PREFIX}{name}"), v));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let header_len = 4 + 4 + 32 + 8 + 4;
        let table_len: usize = tensors
            .iter()
            .map(|(n, t)| 4 + n.len() + 4 + 8 * t.shape().len() + 1 + 8)
            .sum();
        let mut offset = (header_len + table_len) as u64;
        let mut out = Vec::with_capacity(offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(DTYPE_F32);
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.len() as u64;
        }
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses the header and tensor table only.
    pub fn read_table(bytes: &[u8]) -> Result<(u32, [u8; 32], u64, Vec<TableEntry>)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Integrity("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "checkpoint format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let hash: [u8; 32] = r.take(32, "config hash")?.try_into().expect("32 bytes");
        let step = r.u64("step")?;
        let count = r.u32("tensor count")? as usize;
        let mut table = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let what = format!("tensor record {i}");
            let n = r.u32(&what)? as usize;
            let name = std::str::from_utf8(r.take(n, &what)?)
                .map_err(|_| Error::Integrity(format!("{what}: name is not UTF-8")))?
                .to_string();
            let rank = r.u32(&what)? as usize;
            if rank > 8 {
                return Err(Error::Integrity(format!("{name}: rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.u64(&what).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let dtype = r.u8(&what)?;
            if dtype != DTYPE_F32 {
                return Err(Error::Integrity(format!("{name}: unknown dtype tag {dtype}")));
            }
            let offset = r.u64(&what)?;
            table.push(TableEntry {
                name,
                shape,
                dtype,
                offset,
            });
        }
        Ok((version, hash, step, table))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (format_version, config_hash, step, table) = Self::read_table(bytes)?;
        let mut params = ParamSet::new();
        let mut moments: Vec<(String, Tensor<f32>)> = Vec::new();
        for e in &table {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = n
                .checked_mul(4)
                .and_then(|len| start.checked_add(len))
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| {
                    Error::Integrity(format!(
                        "tensor {} payload at {} overruns the file ({} bytes)",
                        e.name,
                        e.offset,
                        bytes.len()
                    ))
                })?;
            let data = bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::from_vec(&e.shape, data)?;
            if e.name.starts_with(M_PREFIX) || e.name.starts_with(V_PREFIX) {
                moments.push((e.name.clone(), t));
            } else {
                params.insert(e.name.clone(), t);
            }
        }
        let mut adam_m = Vec::new();
        let mut adam_v = Vec::new();
        if !moments.is_empty() {
            for (name, t) in params.iter() {
                let find = |prefix: &str| {
                    let key = format!("{prefix}{name}");
                    moments
                        .iter()
                        .find(|(n, _)| *n == key)
                        .map(|(_, m)| m.clone())
                        .filter(|m| m.shape() == t.shape())
                        .ok_or_else(|| Error::Integrity(format!("missing or misshapen {key}")))
                };
                adam_m.push(find(M_PREFIX)?);
                adam_v.push(find(V_PREFIX)?);
            }
            if moments.len() != 2 * params.len() {
                return Err(Error::Integrity("optimizer moments for unknown tensors".into()));
            }
        }
        Ok(Checkpoint {
            format_version,
            config_hash,
            step,
            params,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint; with `expected_hash` set, a different config hash
    /// is refused and both digests are reported.
    pub fn load(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Self::from_bytes(&bytes)
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        if let Some(h) = expected_hash {
            if h != &ck.config_hash {
                return Err(Error::Config(format!(
                    "{}: checkpoint config hash {} does not match current config hash {}",
                    path.display(),
                    to_hex(&ck.config_hash),
                    to_hex(h)
                )));
            }
        }
        Ok(ck)
    }
}
