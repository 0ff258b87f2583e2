//! Flat binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "PSEGCKPT"
//! version  u32      1
//! spec     u64 length + UTF-8 JSON of the NetworkSpec
//! iter     u64
//! digest   32 bytes SHA-256 of the run configuration
//! tensors  u32 count, then per tensor:
//!            u32 name length + name, u8 role, 4 x u32 dims, f64 values
//! optim    u8 flag; if 1: f64 base_lr, f64 momentum, u32 count,
//!            then per velocity 4 x u32 dims + f64 values
//! ```
//!
//! A plain-text manifest is written next to the file as `<path>.manifest.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::params::{Param, ParamStore};
use super::spec::{NetworkSpec, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::{OptimizerState, Shape, Tensor};

const MAGIC: &[u8; 8] = b"PSEGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
    pub iteration: u64,
    pub config_digest: [u8; 32],
}

pub fn config_digest(config_text: &str) -> [u8; 32] {
    Sha256::digest(config_text.as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.txt");
    PathBuf::from(name)
}

fn put_tensor_body(out: &mut Vec<u8>, t: &Tensor) {
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor_body(&mut self) -> Result<Tensor> {
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = self.u32()? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let bytes = self.take(shape.len().checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let spec = serde_json::to_vec(&self.spec).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.extend_from_slice(&(spec.len() as u64).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.role.code());
            put_tensor_body(&mut out, &p.value);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.base_lr.to_le_bytes());
                out.extend_from_slice(&opt.momentum.to_le_bytes());
                out.extend_from_slice(&(opt.velocity.len() as u32).to_le_bytes());
                for v in &opt.velocity {
                    put_tensor_body(&mut out, v);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let spec: NetworkSpec =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("spec: {e}")))?;
        let iteration = r.u64()?;
        let config_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let decls = spec.params().map_err(|e| Error::Checkpoint(format!("spec: {e}")))?;
        let count = r.u32()? as usize;
        if count != decls.len() {
            return Err(Error::Checkpoint(format!(
                "spec declares {} tensors, file holds {count}",
                decls.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for d in &decls {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let role = ParamRole::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown tensor role".into()))?;
            let value = r.tensor_body()?;
            if name != d.name || role != d.role {
                return Err(Error::Checkpoint(format!("expected tensor {}, found {name}", d.name)));
            }
            params.push(Param {
                name,
                role,
                lr_mult: d.lr_mult,
                value,
            });
        }
        let params = ParamStore::from_params(params);
        params
            .check_against(&spec)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let base_lr = r.f64()?;
                let momentum = r.f64()?;
                let n = r.u32()? as usize;
                if n != params.len() {
                    return Err(Error::Checkpoint(format!("{n} velocities for {} tensors", params.len())));
                }
                let velocity = (0..n).map(|_| r.tensor_body()).collect::<Result<Vec<_>>>()?;
                Some(OptimizerState {
                    base_lr,
                    momentum,
                    velocity,
                })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            spec,
            params,
            optimizer,
            iteration,
            config_digest,
        })
    }

    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format PSEGCKPT v{VERSION}");
        let _ = writeln!(s, "iteration {}", self.iteration);
        let _ = writeln!(s, "config_sha256 {}", hex(&self.config_digest));
        let _ = writeln!(s, "input_channels {}", self.spec.input_channels);
        let _ = writeln!(s, "tensors {}", self.params.len());
        for p in self.params.iter() {
            let _ = writeln!(s, "{} {:?} {} lr_mult={}", p.name, p.role, p.value.shape(), p.lr_mult);
        }
        match &self.optimizer {
            Some(o) => {
                let _ = writeln!(s, "optimizer sgd base_lr={} momentum={}", o.base_lr, o.momentum);
            }
            None => {
                let _ = writeln!(s, "optimizer none");
            }
        }
        s
    }

    /// Writes the container and its manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        std::fs::write(&mpath, self.manifest()).map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
