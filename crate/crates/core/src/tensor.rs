//! Dense row-major tensors and the CFTENSR binary container.
//!
//! Container layout (all integers little-endian):
//! 8-byte magic `CFTENSR\0`, u32 version (=1), u32 rank, u32 dims[rank],
//! u8 dtype (0 = f32, 1 = u32, 2 = f64), then the row-major payload.
//!
//! A named-tensor archive (for model parameters and state snapshots) is a
//! sequence of records under its own magic: 8-byte `CFTINDEX`, u32 count,
//! then per entry u32 name length, name bytes (UTF-8), and one complete
//! CFTENSR record.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CFTENSR\0";
const INDEX_MAGIC: &[u8; 8] = b"CFTINDEX";
const VERSION: u32 = 1;
const MAX_RANK: u32 = 8;
const MAX_ELEMS: u64 = 1 << 32;

/// Element storage of a [`Tensor`].
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U32(_) => 1,
            TensorData::F64(_) => 2,
        }
    }
}

/// A dense row-major tensor with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::data(format!(
                "tensor shape {shape:?} implies {n} elements, payload has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
        Tensor::new(shape, TensorData::F32(data))
    }

    pub fn from_u32(shape: Vec<usize>, data: Vec<u32>) -> Result<Tensor> {
        Tensor::new(shape, TensorData::U32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(shape, TensorData::F64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            _ => Err(Error::data("tensor is not f32")),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match &self.data {
            TensorData::U32(v) => Ok(v),
            _ => Err(Error::data("tensor is not u32")),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            _ => Err(Error::data("tensor is not f64")),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&[self.data.dtype_code()])?;
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::U32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::data("bad CFTENSR magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::data(format!("unsupported CFTENSR version {version}")));
        }
        let rank = read_u32(r)?;
        if rank > MAX_RANK {
            return Err(Error::data(format!("CFTENSR rank {rank} exceeds limit {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = read_u32(r)? as u64;
            elems = elems.saturating_mul(d.max(1)).min(MAX_ELEMS + 1);
            shape.push(d as usize);
        }
        if elems > MAX_ELEMS {
            return Err(Error::data("CFTENSR element count exceeds limit"));
        }
        let n: usize = shape.iter().product();
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let data = match dtype[0] {
            0 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                TensorData::F32(
                    buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                )
            }
            1 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                TensorData::U32(
                    buf.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect(),
                )
            }
            2 => {
                let mut buf = vec![0u8; n * 8];
                r.read_exact(&mut buf)?;
                TensorData::F64(
                    buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                )
            }
            d => return Err(Error::data(format!("unknown CFTENSR dtype {d}"))),
        };
        Tensor::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Tensor::read_from(&mut f)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// An ordered name → tensor mapping serialized as a CFTINDEX archive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: BTreeMap<String, Tensor>,
}

impl TensorArchive {
    pub fn new() -> TensorArchive {
        TensorArchive::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::data(format!("archive has no tensor named '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            t.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<TensorArchive> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::data("bad CFTINDEX magic"));
        }
        let count = read_u32(r)?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return Err(Error::data("CFTINDEX name too long"));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::data("CFTINDEX name is not UTF-8"))?;
            entries.insert(name, Tensor::read_from(r)?);
        }
        Ok(TensorArchive { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TensorArchive> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        TensorArchive::read_from(&mut f)
    }
}
