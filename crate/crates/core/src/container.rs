//! The `.vxtk` tensor container.
//!
//! One tensor per file, little-endian throughout:
//!
//! | offset | size        | field                              |
//! |--------|-------------|------------------------------------|
//! | 0      | 4           | magic `b"VXTK"`                    |
//! | 4      | 2           | version, always 1                  |
//! | 6      | 2           | dtype (0 = `f32`, 1 = `u8`)        |
//! | 8      | 2           | ndims                              |
//! | 10     | 2           | reserved, always 0                 |
//! | 12     | 8 × ndims   | dims as `u64`                      |
//! | …      | ∏dims × 4/1 | row-major payload, last dim fastest|

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"VXTK";
pub const VERSION: u16 = 1;
/// Bytes before the dims list.
pub const FIXED_HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:?}, expected \"VXTK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u16),
    #[error("truncated container: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid dims {0:?}: need at least one dimension, each >= 1")]
    InvalidDims(Vec<u64>),
    #[error("dims {dims:?} need {expected} elements but payload holds {found}")]
    PayloadMismatch {
        dims: Vec<u64>,
        expected: usize,
        found: usize,
    },
    #[error("expected dtype {expected:?}, found {found:?}")]
    WrongDtype { expected: DType, found: DType },
    #[error("expected shape {expected}, found {found:?}")]
    WrongShape { expected: String, found: Vec<u64> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum DType {
    F32 = 0,
    U8 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u16) -> Result<Self, ContainerError> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U8),
            other => Err(ContainerError::UnsupportedDtype(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A validated n-dimensional tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    dims: Vec<u64>,
    payload: Payload,
}

fn element_count(dims: &[u64]) -> Result<usize, ContainerError> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(ContainerError::InvalidDims(dims.to_vec()));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
        .ok_or_else(|| ContainerError::InvalidDims(dims.to_vec()))
}

impl TensorContainer {
    pub fn new(dims: Vec<u64>, payload: Payload) -> Result<Self, ContainerError> {
        let expected = element_count(&dims)?;
        if payload.len() != expected {
            return Err(ContainerError::PayloadMismatch {
                dims,
                expected,
                found: payload.len(),
            });
        }
        Ok(Self { dims, payload })
    }

    pub fn from_f32(dims: &[usize], data: Vec<f32>) -> Result<Self, ContainerError> {
        Self::new(dims.iter().map(|&d| d as u64).collect(), Payload::F32(data))
    }

    pub fn from_u8(dims: &[usize], data: Vec<u8>) -> Result<Self, ContainerError> {
        Self::new(dims.iter().map(|&d| d as u64).collect(), Payload::U8(data))
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        self.payload.dtype()
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn into_payload(self) -> Payload {
        self.payload
    }

    /// Header length including the dims list.
    pub fn header_len(&self) -> usize {
        FIXED_HEADER_LEN + 8 * self.dims.len()
    }

    pub fn payload_byte_len(&self) -> usize {
        self.payload.len() * self.dtype().size()
    }

    /// Consumes the container, returning `f32` data if the shape matches
    /// `expected` (`None` entries match any extent).
    pub fn into_f32(self, expected: &[Option<usize>]) -> Result<(Vec<usize>, Vec<f32>), ContainerError> {
        let dims = check_shape(&self.dims, expected)?;
        match self.payload {
            Payload::F32(v) => Ok((dims, v)),
            other => Err(ContainerError::WrongDtype {
                expected: DType::F32,
                found: other.dtype(),
            }),
        }
    }

    pub fn into_u8(self, expected: &[Option<usize>]) -> Result<(Vec<usize>, Vec<u8>), ContainerError> {
        let dims = check_shape(&self.dims, expected)?;
        match self.payload {
            Payload::U8(v) => Ok((dims, v)),
            other => Err(ContainerError::WrongDtype {
                expected: DType::U8,
                found: other.dtype(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + self.payload_byte_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dtype() as u16).to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(ContainerError::Truncated {
                    expected,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        need(FIXED_HEADER_LEN)?;
        let u16_at = |off: usize| u16::from_le_bytes([bytes[off], bytes[off + 1]]);
        let version = u16_at(4);
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(u16_at(6))?;
        let ndims = u16_at(8) as usize;
        let header_len = FIXED_HEADER_LEN + 8 * ndims;
        need(header_len)?;
        let dims: Vec<u64> = bytes[FIXED_HEADER_LEN..header_len]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count = element_count(&dims)?;
        let total = count
            .checked_mul(dtype.size())
            .and_then(|n| n.checked_add(header_len))
            .ok_or_else(|| ContainerError::InvalidDims(dims.clone()))?;
        need(total)?;
        if bytes.len() > total {
            return Err(ContainerError::TrailingBytes(bytes.len() - total));
        }
        let body = &bytes[header_len..total];
        let payload = match dtype {
            DType::F32 => Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => Payload::U8(body.to_vec()),
        };
        Ok(Self { dims, payload })
    }
}

fn check_shape(dims: &[u64], expected: &[Option<usize>]) -> Result<Vec<usize>, ContainerError> {
    let ok = dims.len() == expected.len()
        && dims
            .iter()
            .zip(expected)
            .all(|(&d, e)| e.is_none_or(|e| e as u64 == d));
    if !ok {
        let shown: Vec<String> = expected
            .iter()
            .map(|e| e.map_or_else(|| "*".to_string(), |v| v.to_string()))
            .collect();
        return Err(ContainerError::WrongShape {
            expected: format!("[{}]", shown.join(", ")),
            found: dims.to_vec(),
        });
    }
    Ok(dims.iter().map(|&d| d as usize).collect())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<TensorContainer, ContainerError> {
    TensorContainer::from_bytes(&fs::read(path)?)
}

pub fn write_container(tensor: &TensorContainer, path: impl AsRef<Path>) -> Result<(), ContainerError> {
    let mut file = io::BufWriter::new(fs::File::create(path)?);
    file.write_all(&tensor.to_bytes())?;
    file.flush()?;
    Ok(())
}
