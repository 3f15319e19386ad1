//! Binary checkpoint format.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes  "MVITCKPT"
//! version      u32      currently 1
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (CheckpointHeader)
//! count        u32      number of tensor records
//! record*      name_len u32, name UTF-8, dtype u8 (1 = f64), rank u32,
//!              dims rank × u64, data product(dims) × f64
//! ```
//!
//! Tensor names are prefixed by their role: `param/`, `guide/` (frozen
//! matte generator inside a removal checkpoint), `optim.m/` and `optim.v/`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{OptimizerSettings, OptimizerState};
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"MVITCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// What the checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    MatteGenerator,
    Removal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    /// Network config of the main parameter set.
    pub config: serde_json::Value,
    /// Config of the embedded guidance generator, if any.
    pub guide_config: Option<serde_json::Value>,
    pub optimizer: OptimizerSettings,
    pub optimizer_step: u64,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

/// `(name, dims, values)`.
pub type TensorRecord = (String, Vec<usize>, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<TensorRecord>,
    pub guide: Vec<TensorRecord>,
    pub optimizer_slots: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(
        kind: CheckpointKind,
        config: serde_json::Value,
        params: &ParamStore,
        optimizer: &OptimizerState,
        step: u64,
        epoch: u64,
        seed: u64,
    ) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                kind,
                config,
                guide_config: None,
                optimizer: optimizer.settings,
                optimizer_step: optimizer.step,
                step,
                epoch,
                seed,
            },
            params: params.records(),
            guide: Vec::new(),
            optimizer_slots: optimizer.slots.clone(),
        }
    }

    pub fn with_guide(mut self, config: serde_json::Value, params: &ParamStore) -> Checkpoint {
        self.header.guide_config = Some(config);
        self.guide = params.records();
        self
    }

    pub fn optimizer_state(&self) -> OptimizerState {
        OptimizerState {
            settings: self.header.optimizer,
            step: self.header.optimizer_step,
            slots: self.optimizer_slots.clone(),
        }
    }

    pub fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.header.config.clone())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut records: Vec<(String, &[usize], &[f64])> = Vec::new();
        for (name, dims, data) in &self.params {
            records.push((format!("param/{name}"), dims, data));
        }
        for (name, dims, data) in &self.guide {
            records.push((format!("guide/{name}"), dims, data));
        }
        let lens: Vec<[usize; 2]> = self.optimizer_slots.iter().map(|(_, m, v)| [m.len(), v.len()]).collect();
        for ((name, m, v), lens) in self.optimizer_slots.iter().zip(&lens) {
            records.push((format!("optim.m/{name}"), &lens[..1], m));
            records.push((format!("optim.v/{name}"), &lens[1..], v));
        }
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, dims, data) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("not a checkpoint (magic {magic:02x?})")));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let hlen = read_u64(&mut r)? as usize;
        if hlen > r.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&r[..hlen])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        r = &r[hlen..];
        let count = read_u32(&mut r)?;
        let mut ck = Checkpoint {
            header,
            params: Vec::new(),
            guide: Vec::new(),
            optimizer_slots: Vec::new(),
        };
        let mut pending_m: Option<(String, Vec<f64>)> = None;
        for _ in 0..count {
            let nlen = read_u32(&mut r)? as usize;
            if nlen > r.len() {
                return Err(Error::Checkpoint("truncated tensor name".into()));
            }
            let name = std::str::from_utf8(&r[..nlen])
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            r = &r[nlen..];
            let mut dtype = [0u8];
            read_exact(&mut r, &mut dtype)?;
            if dtype[0] != DTYPE_F64 {
                return Err(Error::Checkpoint(format!("tensor {name}: unknown dtype tag {}", dtype[0])));
            }
            let rank = read_u32(&mut r)? as usize;
            let dims = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            if n.checked_mul(8).map_or(true, |b| b > r.len()) {
                return Err(Error::Checkpoint(format!("tensor {name}: truncated data")));
            }
            let data: Vec<f64> = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[n * 8..];
            let (role, base) = name
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("tensor name {name} has no role prefix")))?;
            match role {
                "param" => ck.params.push((base.to_string(), dims, data)),
                "guide" => ck.guide.push((base.to_string(), dims, data)),
                "optim.m" => pending_m = Some((base.to_string(), data)),
                "optim.v" => match pending_m.take() {
                    Some((mname, m)) if mname == base => ck.optimizer_slots.push((mname, m, data)),
                    _ => return Err(Error::Checkpoint(format!("optimizer slot {base} lacks its first moment"))),
                },
                other => return Err(Error::Checkpoint(format!("unknown tensor role {other}"))),
            }
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(ck)
    }

    /// Writes through a temporary file and renames into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("unexpected end of checkpoint".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
