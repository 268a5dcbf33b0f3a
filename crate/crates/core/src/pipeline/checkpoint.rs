//! Binary container for named tensors.
//!
//! Layout (little-endian): `"SGNC"`, version `u32`, kind `u32`, entry count
//! `u32`, then per entry a `u32` name length, the UTF-8 name, a `u8` dtype
//! tag, a `u32` rank, `rank` `u64` extents and the raw payload. A trailing
//! FNV-1a 64 checksum covers every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const MAGIC: &[u8; 4] = b"SGNC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Features = 1,
    Pca = 2,
    Whitened = 3,
    Decoder = 4,
    Vae = 5,
    Gan = 6,
}

impl ModelKind {
    fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => Self::Features,
            2 => Self::Pca,
            3 => Self::Whitened,
            4 => Self::Decoder,
            5 => Self::Vae,
            6 => Self::Gan,
            _ => return Err(Error::Format(format!("unknown checkpoint kind {tag}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Self::F32(t) => t.shape(),
            Self::F64(t) => t.shape(),
        }
    }
}

impl From<Tensor<f32>> for StoredTensor {
    fn from(t: Tensor<f32>) -> Self {
        Self::F32(t)
    }
}

impl From<Tensor<f64>> for StoredTensor {
    fn from(t: Tensor<f64>) -> Self {
        Self::F64(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub kind: ModelKind,
    pub entries: Vec<(String, StoredTensor)>,
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl ModelCheckpoint {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: impl Into<StoredTensor>) {
        self.entries.push((name.into(), tensor.into()));
    }

    pub fn get(&self, name: &str) -> Result<&StoredTensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name:?}")))
    }

    pub fn get_f32(&self, name: &str) -> Result<&Tensor<f32>> {
        match self.get(name)? {
            StoredTensor::F32(t) => Ok(t),
            StoredTensor::F64(_) => Err(Error::Format(format!("tensor {name:?} is f64, expected f32"))),
        }
    }

    pub fn get_f64(&self, name: &str) -> Result<&Tensor<f64>> {
        match self.get(name)? {
            StoredTensor::F64(t) => Ok(t),
            StoredTensor::F32(_) => Err(Error::Format(format!("tensor {name:?} is f32, expected f64"))),
        }
    }

    /// Entries of one dtype, in order.
    pub fn typed<T: Float>(&self) -> Vec<(String, Tensor<T>)> {
        self.entries
            .iter()
            .filter_map(|(n, t)| match t {
                StoredTensor::F32(t) if T::DTYPE == f32::DTYPE => Some((n.clone(), t.cast())),
                StoredTensor::F64(t) if T::DTYPE == f64::DTYPE => Some((n.clone(), t.cast())),
                _ => None,
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (dtype, shape) = match tensor {
                StoredTensor::F32(t) => (f32::DTYPE, t.shape()),
                StoredTensor::F64(t) => (f64::DTYPE, t.shape()),
            };
            out.push(dtype);
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match tensor {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    /// Parses and verifies a checkpoint. `origin` names the source in errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 + 8 {
            return Err(Error::Format(format!("{} is too short to be a checkpoint", origin.display())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(Error::Checksum { path: origin.to_path_buf(), stored, computed });
        }
        let mut r = Reader { bytes: body, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(Error::Format(format!("{} does not start with SGNC", origin.display())));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("{}: unsupported format version {version}", origin.display())));
        }
        let kind = ModelKind::from_tag(r.u32()?)?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format(format!("{}: tensor name is not UTF-8", origin.display())))?;
            let dtype = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Format(format!("{}: tensor {name:?} is too large", origin.display())))?;
            let tensor = match dtype {
                0 => {
                    let raw = r.take(numel.checked_mul(4).ok_or_else(|| r.truncated())?)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                    StoredTensor::F32(Tensor::new(&shape, data)?)
                }
                1 => {
                    let raw = r.take(numel.checked_mul(8).ok_or_else(|| r.truncated())?)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                    StoredTensor::F64(Tensor::new(&shape, data)?)
                }
                other => return Err(Error::Format(format!("{}: unknown dtype tag {other}", origin.display()))),
            };
            entries.push((name, tensor));
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{}: {} trailing bytes", origin.display(), body.len() - r.pos)));
        }
        Ok(Self { kind, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks the kind.
    pub fn load_kind(path: &Path, kind: ModelKind) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.kind != kind {
            return Err(Error::Format(format!("{} holds a {:?} checkpoint, expected {kind:?}", path.display(), ck.kind)));
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn truncated(&self) -> Error {
        Error::Format(format!("{} is truncated", self.origin.display()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.truncated())?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
