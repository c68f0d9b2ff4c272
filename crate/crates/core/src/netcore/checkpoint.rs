//! Little-endian binary checkpoints.
//!
//! ```text
//! magic        8 bytes  "RMLCKPT1"
//! descriptor   u32 length + UTF-8 arch descriptor (see `ArchSpec`'s Display)
//! K, C         u32, u32
//! count        u32 number of tensors
//! per tensor   u32 name length + UTF-8 name
//!              u32 ndim, ndim × u32 dims
//!              prod(dims) × f32 values
//! ```
//!
//! Model parameters come first in model order. Extra tensors (a prototype
//! bank under `bank.*`) may follow.

use std::path::Path;

use super::arch::ArchSpec;
use super::model::{NetModel, Param};
use crate::error::{Result, RmlError};

pub const MAGIC: &[u8; 8] = b"RMLCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Captures `model`'s parameters, narrowed to f32.
    pub fn from_model(model: &NetModel) -> Checkpoint {
        let mut ck = Checkpoint {
            arch: *model.arch(),
            num_classes: model.num_classes(),
            feature_dim: model.feature_dim(),
            tensors: Vec::new(),
        };
        for p in model.params() {
            ck.push(&p.name, p.shape.clone(), &p.data);
        }
        ck
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: &[f64]) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape,
            data: data.iter().map(|&v| v as f32).collect(),
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds the stored model in eval mode with noise disabled.
    pub fn model(&self) -> Result<NetModel> {
        let template = NetModel::build(
            self.arch,
            self.num_classes,
            self.feature_dim,
            super::NoiseConfig::off(),
            0,
        )?;
        let mut params = Vec::with_capacity(template.params().len());
        for p in template.params() {
            let t = self
                .get(&p.name)
                .ok_or_else(|| RmlError::Input(format!("checkpoint lacks parameter `{}`", p.name)))?;
            params.push(Param {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: t.data.iter().map(|&v| v as f64).collect(),
            });
        }
        NetModel::from_params(self.arch, self.num_classes, self.feature_dim, params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let desc = self.arch.to_string();
        put_u32(&mut out, desc.len());
        out.extend_from_slice(desc.as_bytes());
        put_u32(&mut out, self.num_classes);
        put_u32(&mut out, self.feature_dim);
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut out, d);
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(RmlError::Format {
                offset: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        let n = r.u32()?;
        let at = r.pos;
        let desc = r.string(n)?;
        let arch: ArchSpec = desc.parse().map_err(|e: RmlError| RmlError::Format {
            offset: at as u64,
            message: e.to_string(),
        })?;
        let num_classes = r.u32()?;
        let feature_dim = r.u32()?;
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let n = r.u32()?;
            let name = r.string(n)?;
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or_else(|| r.err("tensor size overflows"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after last tensor"));
        }
        Ok(Checkpoint {
            arch,
            num_classes,
            feature_dim,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| RmlError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| RmlError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: &str) -> RmlError {
        RmlError::Format {
            offset: self.pos as u64,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let at = self.pos;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| RmlError::Format {
            offset: at as u64,
            message: "name is not UTF-8".into(),
        })
    }
}
