//! Self-describing binary tensor files.
//!
//! Layout: magic `CLAB`, version `u16`, dtype code `u8` (0 = f32, 1 = b16),
//! rank `u8`, one `u64` per dimension, then the row-major payload. All
//! integers and payload words are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use half::bf16;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLAB";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    B16,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::B16 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::B16),
            c => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::B16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorHeader {
    pub fn byte_len(&self) -> usize {
        8 + 8 * self.shape.len()
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Total file size of a tensor with this dtype and shape.
pub fn file_size(dtype: DType, shape: &[usize]) -> usize {
    8 + 8 * shape.len() + dtype.size() * shape.iter().product::<usize>()
}

fn read_header(reader: &mut impl Read) -> Result<TensorHeader> {
    let mut fixed = [0u8; 8];
    reader
        .read_exact(&mut fixed)
        .map_err(|_| Error::Format("truncated tensor header".into()))?;
    if &fixed[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &fixed[..4])));
    }
    let version = u16::from_le_bytes([fixed[4], fixed[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let dtype = DType::from_code(fixed[6])?;
    let rank = fixed[7] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut dim = [0u8; 8];
        reader
            .read_exact(&mut dim)
            .map_err(|_| Error::Format("truncated tensor shape".into()))?;
        let dim = u64::from_le_bytes(dim);
        shape.push(
            usize::try_from(dim).map_err(|_| Error::Format(format!("dimension {dim} too large")))?,
        );
    }
    Ok(TensorHeader { dtype, shape })
}

pub fn read_tensor_header(path: &Path) -> Result<TensorHeader> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut BufReader::new(file))
}

/// Reads a tensor file, widening b16 payloads to f32.
pub fn read_tensor(path: &Path) -> Result<(TensorHeader, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let expected_len = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
    let mut reader = BufReader::new(file);
    let header = read_header(&mut reader)?;
    let count = header.element_count();
    let payload_len = count * header.dtype.size();
    if expected_len != header.byte_len() + payload_len {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, header implies {payload_len}",
            path.display(),
            expected_len.saturating_sub(header.byte_len())
        )));
    }
    let mut bytes = vec![0u8; payload_len];
    reader
        .read_exact(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let data = match header.dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        DType::B16 => bytes
            .chunks_exact(2)
            .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
    };
    Ok((header, data))
}

/// Writes a tensor. For `DType::B16` values are rounded to nearest bfloat16.
pub fn write_tensor(path: &Path, dtype: DType, shape: &[usize], data: &[f32]) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(Error::DimensionMismatch {
            expected: count,
            found: data.len(),
        });
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::Parameter(format!("rank {} too large", shape.len())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(8 + 8 * shape.len());
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.push(dtype.code());
    header.push(shape.len() as u8);
    for &d in shape {
        header.extend_from_slice(&(d as u64).to_le_bytes());
    }
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut payload = Vec::with_capacity(count * dtype.size());
    match dtype {
        DType::F32 => data
            .iter()
            .for_each(|v| payload.extend_from_slice(&v.to_le_bytes())),
        DType::B16 => data
            .iter()
            .for_each(|v| payload.extend_from_slice(&bf16::from_f32(*v).to_le_bytes())),
    }
    w.write_all(&payload).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
