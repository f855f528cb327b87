//! `TAAG` binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TAAG" | u32 version (=1) | u32 entry count
//! per entry: u32 name length | UTF-8 name | u8 dtype (0=f32, 1=f64) | u8 rank
//!            | u64 dim × rank | raw little-endian values
//! ```

use super::{DType, Result, Storable, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TAAG";
const VERSION: u32 = 1;

/// One named tensor as stored on disk, independent of the in-memory dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl CheckpointEntry {
    pub fn from_tensor<T: Storable>(name: impl Into<String>, tensor: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(tensor.numel() * T::DTYPE.size());
        for v in tensor.data() {
            v.write_le(&mut bytes);
        }
        Self {
            name: name.into(),
            dtype: T::DTYPE,
            shape: tensor.shape().to_vec(),
            bytes,
        }
    }

    pub fn to_tensor<T: Storable>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(TensorError::Format(format!(
                "entry {} holds {:?}, requested {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        let size = T::DTYPE.size();
        let data = self.bytes.chunks_exact(size).map(T::read_le).collect();
        Tensor::new(self.shape.clone(), data)
    }
}

pub fn write_checkpoint(entries: &[CheckpointEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dtype.code());
        out.push(e.shape.len() as u8);
        for d in &e.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&e.bytes);
    }
    out
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
            .filter(|end| *end <= self.buf.len())
            .ok_or_else(|| TensorError::Format(format!("truncated at byte {}", self.pos)))?;
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
}

pub fn read_checkpoint(buf: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(TensorError::Format("bad magic, not a TAAG file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| TensorError::Format(format!("entry name: {e}")))?
            .to_string();
        let dtype = DType::from_code(r.u8()?)
            .ok_or_else(|| TensorError::Format(format!("entry {name}: unknown dtype")))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| TensorError::Format(format!("entry {name}: shape overflow")))?;
        let bytes = r.take(numel * dtype.size())?.to_vec();
        entries.push(CheckpointEntry {
            name,
            dtype,
            shape,
            bytes,
        });
    }
    if r.pos != buf.len() {
        return Err(TensorError::Format(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(entries)
}
