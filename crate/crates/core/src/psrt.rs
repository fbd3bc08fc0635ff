//! The PSRT tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"PSRT" | u8 version (=1) | u8 dtype | u8 ndim | u32 dims[ndim] | payload
//! ```
//!
//! `dtype` 0 is `f32`; 1 is `f64`, used for checkpoints that must resume
//! bit-exactly. The payload is row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSRT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Encode an n-d tensor.
pub fn encode(tensor: &ArrayD<f64>, dtype: DType) -> Result<Vec<u8>> {
    let ndim = tensor.ndim();
    if ndim > u8::MAX as usize {
        return Err(Error::Format(format!("too many dimensions: {ndim}")));
    }
    let mut out = Vec::with_capacity(7 + 4 * ndim + tensor.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(ndim as u8);
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    // `iter` walks logical (row-major) order regardless of memory layout.
    match dtype {
        DType::F32 => tensor
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => tensor
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Decode a tensor; values are widened to `f64`.
pub fn decode(bytes: &[u8]) -> Result<ArrayD<f64>> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing PSRT magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => DType::F32,
        1 => DType::F64,
        d => return Err(Error::Format(format!("unsupported dtype {d}"))),
    };
    let ndim = bytes[6] as usize;
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != count * dtype.width() {
        return Err(Error::Format(format!(
            "payload is {} bytes, shape {:?} needs {}",
            payload.len(),
            dims,
            count * dtype.width()
        )));
    }
    let values: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write(path: impl AsRef<Path>, tensor: &ArrayD<f64>, dtype: DType) -> Result<()> {
    write_atomic(path.as_ref(), &encode(tensor, dtype)?)
}

pub fn read(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_2d(path: impl AsRef<Path>, m: &Array2<f64>, dtype: DType) -> Result<()> {
    write(path, &m.clone().into_dyn(), dtype)
}

pub fn read_2d(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let t = read(path.as_ref())?;
    let shape = t.shape().to_vec();
    t.into_dimensionality()
        .map_err(|_| Error::Format(format!("expected a 2-d tensor, got shape {shape:?}")))
}

pub fn write_1d(path: impl AsRef<Path>, v: &[f64], dtype: DType) -> Result<()> {
    write(path, &ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).expect("1-d shape"), dtype)
}

pub fn read_1d(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let t = read(path.as_ref())?;
    if t.ndim() != 1 {
        return Err(Error::Format(format!("expected a 1-d tensor, got shape {:?}", t.shape())));
    }
    Ok(t.iter().copied().collect())
}

/// Write via a sibling temp file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
