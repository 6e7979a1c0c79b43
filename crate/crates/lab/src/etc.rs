//! ETC v1 tensor container.
//!
//! Layout: the header line `ETC1\n`, then for each tensor a little-endian
//! u32 name length, the UTF-8 name, a u32 rank, one u32 per dimension, a
//! dtype byte (0 = f32, 1 = f64) and the raw little-endian payload. Entries
//! run to the end of the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use edgelab_core::{DType, Tensor};

use crate::error::{IoContext, LabError, Result};

pub const MAGIC: &[u8; 5] = b"ETC1\n";

/// Ranks above this are rejected as corrupt.
const MAX_RANK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum EtcTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl EtcTensor {
    pub fn dtype(&self) -> DType {
        match self {
            EtcTensor::F32(_) => DType::F32,
            EtcTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            EtcTensor::F32(t) => t.shape(),
            EtcTensor::F64(t) => t.shape(),
        }
    }

    /// The tensor as f32, rounding f64 payloads.
    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            EtcTensor::F32(t) => t.clone(),
            EtcTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for EtcTensor {
    fn from(t: Tensor<f32>) -> Self {
        EtcTensor::F32(t)
    }
}

impl From<Tensor<f64>> for EtcTensor {
    fn from(t: Tensor<f64>) -> Self {
        EtcTensor::F64(t)
    }
}

pub type Entry = (String, EtcTensor);

fn u32_of(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| LabError::data(format!("{what} {n} does not fit in u32")))
}

pub fn write_etc<W: Write>(mut w: W, entries: &[Entry]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for (name, tensor) in entries {
        buf.extend_from_slice(&u32_of(name.len(), "name length")?);
        buf.extend_from_slice(name.as_bytes());
        let shape = tensor.shape();
        buf.extend_from_slice(&u32_of(shape.len(), "rank")?);
        for &d in shape {
            buf.extend_from_slice(&u32_of(d, "dimension")?);
        }
        buf.push(tensor.dtype() as u8);
        match tensor {
            EtcTensor::F32(t) => t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
            EtcTensor::F64(t) => t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
        }
    }
    w.write_all(&buf).map_err(|e| LabError::data(format!("writing ETC: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LabError::data(format!("ETC truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Decodes a whole container held in memory.
pub fn decode_etc(bytes: &[u8]) -> Result<Vec<Entry>> {
    if !bytes.starts_with(MAGIC) {
        return Err(LabError::data("not an ETC1 file"));
    }
    let mut c = Cursor { bytes, pos: MAGIC.len() };
    let mut entries = Vec::new();
    while c.pos < bytes.len() {
        let len = c.u32("name length")?;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| LabError::data("tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u32("rank")?;
        if rank > MAX_RANK {
            return Err(LabError::data(format!("tensor {name}: rank {rank} is implausible")));
        }
        let shape = (0..rank).map(|_| c.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| LabError::data(format!("tensor {name}: element count overflows")))?;
        let tag = c.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| LabError::data(format!("tensor {name}: unknown dtype {tag}")))?;
        let size = count
            .checked_mul(dtype.size())
            .ok_or_else(|| LabError::data(format!("tensor {name}: payload size overflows")))?;
        let payload = c.take(size, "payload")?;
        let tensor = match dtype {
            DType::F32 => {
                let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
                EtcTensor::F32(Tensor::new(&shape, data)?)
            }
            DType::F64 => {
                let data = payload
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect();
                EtcTensor::F64(Tensor::new(&shape, data)?)
            }
        };
        entries.push((name, tensor));
    }
    Ok(entries)
}

pub fn read_etc<R: Read>(mut r: R) -> Result<Vec<Entry>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| LabError::data(format!("reading ETC: {e}")))?;
    decode_etc(&bytes)
}

pub fn save_etc(path: &Path, entries: &[Entry]) -> Result<()> {
    let file = File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    write_etc(&mut w, entries)?;
    w.flush().at(path)
}

pub fn load_etc(path: &Path) -> Result<Vec<Entry>> {
    let file = File::open(path).at(path)?;
    read_etc(BufReader::new(file))
}
